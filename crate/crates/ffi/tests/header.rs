//! The generated C header is a deliverable; make sure it exists after a
//! build and declares the whole surface.

#[test]
fn generated_header_covers_the_api() {
    let header = include_str!("../include/copback.h");
    for needle in [
        "#ifndef COPBACK_H",
        "typedef struct CopbackStore CopbackStore;",
        "typedef enum CopbackStatus",
        "CopbackStatus_Ok = 0",
        "typedef struct CopbackLmArchParams",
        "typedef struct CopbackAnalysisOptions",
        "typedef struct CopbackBacktestSummary",
        "const char *copback_version(void);",
        "const char *copback_last_error(void);",
        "void copback_string_free(char *s);",
        "copback_lmarch_default(void);",
        "size_t copback_innovations_len(size_t n_returns, size_t burn_in);",
        "CopbackStatus copback_innovations(",
        "struct CopbackStore *copback_store_open(const char *dir);",
        "void copback_store_free(struct CopbackStore *store);",
        "CopbackStatus copback_insample_json(",
        "CopbackStatus copback_outsample_json(",
    ] {
        assert!(header.contains(needle), "header is missing {needle:?}");
    }
}
