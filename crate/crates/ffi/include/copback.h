/* C ABI for the copback backtesting engine. */

#ifndef COPBACK_H
#define COPBACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Kernel of the empirical Rosenblatt transform.
typedef enum CopbackKernelShape {
  CopbackKernelShape_Gaussian = 0,
  CopbackKernelShape_Rectangular = 1,
} CopbackKernelShape;

// Which asset the Rosenblatt transform conditions on.
typedef enum CopbackOrientation {
  CopbackOrientation_ConditionOnFirst = 0,
  CopbackOrientation_ConditionOnSecond = 1,
} CopbackOrientation;

// Status of a call. Nonzero means failure; the message behind
// [`copback_last_error`] describes it.
typedef enum CopbackStatus {
  // Success.
  CopbackStatus_Ok = 0,
  // Invalid configuration or parameters.
  CopbackStatus_Config = 2,
  // Invalid or insufficient data.
  CopbackStatus_Data = 3,
  // A computation failed to converge or produced non-finite values.
  CopbackStatus_Computation = 4,
  // A required pointer argument was null.
  CopbackStatus_NullPointer = 5,
  // A string argument was not valid UTF-8.
  CopbackStatus_Utf8 = 6,
  // A panic was caught at the boundary; this is a bug worth reporting.
  CopbackStatus_Panic = 7,
} CopbackStatus;

// Opaque handle to a directory of persisted calibration tables.
typedef struct CopbackStore CopbackStore;

// Parameters of the LM-ARCH volatility filter.
typedef struct CopbackLmArchParams {
  // Shortest characteristic time, in days.
  double tau_min;
  // The ladder stops at the first characteristic time >= tau_max.
  double tau_max;
  // Ratio between consecutive characteristic times.
  double geometric_factor;
  // Horizon of the logarithmic component-weight decay, in days.
  double logarithmic_decay_horizon;
  // Leading returns consumed before the first emitted forecast.
  size_t burn_in;
} CopbackLmArchParams;

// Backtest options; get the defaults from [`copback_options_default`].
typedef struct CopbackAnalysisOptions {
  // Tiles per axis of the tile test.
  size_t tiles_per_axis;
  // Trailing window length of the out-of-sample transform.
  size_t window;
  enum CopbackKernelShape kernel_shape;
  // Half width of the kernel, in probtile units.
  double kernel_half_width;
  enum CopbackOrientation orientation;
  // Null replications per in-sample calibration table.
  size_t nsim_insample;
  // Null replications per out-of-sample calibration table.
  size_t nsim_outofsample;
  // Copula of the reference out-of-sample null.
  double reference_rho;
  double reference_nu;
} CopbackAnalysisOptions;

// Headline numbers of one backtest.
typedef struct CopbackBacktestSummary {
  // Fitted copula correlation.
  double rho;
  // Fitted copula degrees of freedom.
  double nu;
  double tile_statistic;
  // Monte-Carlo p-value of the tile statistic.
  double tile_p;
  double gr_statistic;
  // Monte-Carlo p-value of the GR statistic; NaN out of sample, where the
  // GR statistic is reported uncalibrated.
  double gr_p;
} CopbackBacktestSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing copback call on the same
// thread; copy it if you need it longer.
const char *copback_last_error(void);

// Version of the library as a static null-terminated string.
const char *copback_version(void);

// Release a string returned by this library. Null is accepted and ignored.
//
// # Safety
// `s` must be a pointer previously returned through a `*mut *mut c_char`
// out-parameter of this library, or null. Freeing anything else, or
// freeing twice, is undefined behavior.
void copback_string_free(char *s);

// The default LM-ARCH parameters.
struct CopbackLmArchParams copback_lmarch_default(void);

// Number of innovations produced from `n_returns` returns, i.e.
// `n_returns - burn_in`, or 0 if the series is too short.
size_t copback_innovations_len(size_t n_returns, size_t burn_in);

// Filter a daily log-return series into volatility forecasts and
// innovations. `returns[0]` is the earliest observation. The outputs start
// at the first post-burn-in day: `sigma_out[i]` and `epsilon_out[i]`
// describe `returns[params.burn_in + i]`, and both buffers must hold
// exactly `copback_innovations_len(n_returns, params.burn_in)` values.
//
// # Safety
// `returns` must point to `n_returns` readable doubles; `sigma_out` and
// `epsilon_out` must point to `out_len` writable doubles; `params` must
// point to a readable parameter struct.
enum CopbackStatus copback_innovations(const double *returns,
                                       size_t n_returns,
                                       const struct CopbackLmArchParams *params,
                                       double *sigma_out,
                                       double *epsilon_out,
                                       size_t out_len);

// Open (or designate) a calibration-table store rooted at `dir`. The
// directory is created on first write. Returns null if `dir` is null or
// not UTF-8.
//
// # Safety
// `dir` must be a readable null-terminated string.
struct CopbackStore *copback_store_open(const char *dir);

// Release a store handle. Null is accepted and ignored.
//
// # Safety
// `store` must come from [`copback_store_open`] and not be used afterwards.
void copback_store_free(struct CopbackStore *store);

// The default backtest options.
struct CopbackAnalysisOptions copback_options_default(void);

// In-sample backtest of an innovation pair observed on the same days.
// Missing calibration tables are built and persisted in the store first,
// which can take minutes; pre-populate the store to avoid that. On success
// `summary_out` (if non-null) receives the headline numbers and `json_out`
// (if non-null) the full report, to be freed with [`copback_string_free`].
//
// # Safety
// `eps1` and `eps2` must point to `n` readable doubles each; `options`
// must be readable; `summary_out` and `json_out`, when non-null, must be
// writable; `store` must be a live handle from [`copback_store_open`].
enum CopbackStatus copback_insample_json(const struct CopbackStore *store,
                                         const double *eps1,
                                         const double *eps2,
                                         size_t n,
                                         uint64_t seed,
                                         const struct CopbackAnalysisOptions *options,
                                         struct CopbackBacktestSummary *summary_out,
                                         char **json_out);

// Out-of-sample (rolling forecast) backtest of an innovation pair observed
// on the same days. Same contract as [`copback_insample_json`]; in the
// summary, `gr_p` is NaN because the out-of-sample GR statistic is
// reported uncalibrated.
//
// # Safety
// See [`copback_insample_json`].
enum CopbackStatus copback_outsample_json(const struct CopbackStore *store,
                                          const double *eps1,
                                          const double *eps2,
                                          size_t n,
                                          uint64_t seed,
                                          const struct CopbackAnalysisOptions *options,
                                          struct CopbackBacktestSummary *summary_out,
                                          char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COPBACK_H */
