//! Price loading, return computation, and pairwise date synchronization.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar day as an opaque ordered label, ISO-8601 `YYYY-MM-DD`.
/// Lexicographic order on the string is chronological order for this shape;
/// no calendar arithmetic is ever performed on it.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Date(String);

impl Date {
    pub fn parse(s: &str) -> Result<Self> {
        let b = s.as_bytes();
        let shape_ok = b.len() == 10
            && b[4] == b'-'
            && b[7] == b'-'
            && b.iter()
                .enumerate()
                .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit());
        if !shape_ok {
            return Err(Error::Data(format!(
                "bad date {s:?}: expected YYYY-MM-DD"
            )));
        }
        let month: u32 = s[5..7].parse().unwrap();
        let day: u32 = s[8..10].parse().unwrap();
        if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
            return Err(Error::Data(format!("bad date {s:?}: month or day out of range")));
        }
        Ok(Date(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Date {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Date::parse(&s)
    }
}

impl From<Date> for String {
    fn from(d: Date) -> String {
        d.0
    }
}

impl std::fmt::Display for Date {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Debug for Date {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Date({})", self.0)
    }
}

/// Common view over the date-indexed series types.
pub trait DatedSeries {
    fn asset_id(&self) -> &str;
    fn observations(&self) -> &[(Date, f64)];

    fn values(&self) -> Vec<f64> {
        self.observations().iter().map(|(_, v)| *v).collect()
    }
}

/// Defines a series type holding `(date, value)` observations with strictly
/// increasing dates. The constructor enforces the shared invariant plus an
/// optional per-type value check.
macro_rules! dated_series {
    ($(#[$doc:meta])* $name:ident, $min_len:expr, $value_check:expr) => {
        $(#[$doc])*
        #[derive(Clone, Debug, Serialize, Deserialize)]
        pub struct $name {
            asset_id: String,
            observations: Vec<(Date, f64)>,
        }

        impl $name {
            pub fn new(asset_id: impl Into<String>, observations: Vec<(Date, f64)>) -> Result<Self> {
                let asset_id = asset_id.into();
                if observations.len() < $min_len {
                    return Err(Error::Data(format!(
                        "{}: {} needs at least {} observations, got {}",
                        asset_id, stringify!($name), $min_len, observations.len(),
                    )));
                }
                for w in observations.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::Data(format!(
                            "{}: dates not strictly increasing at {}",
                            asset_id, w[1].0,
                        )));
                    }
                }
                let check: fn(f64) -> bool = $value_check;
                for (d, v) in &observations {
                    if !check(*v) {
                        return Err(Error::Data(format!(
                            "{}: invalid value {} at {}", asset_id, v, d,
                        )));
                    }
                }
                Ok(Self { asset_id, observations })
            }

            pub fn len(&self) -> usize {
                self.observations.len()
            }

            pub fn is_empty(&self) -> bool {
                self.observations.is_empty()
            }
        }

        impl DatedSeries for $name {
            fn asset_id(&self) -> &str {
                &self.asset_id
            }

            fn observations(&self) -> &[(Date, f64)] {
                &self.observations
            }
        }
    };
}
pub(crate) use dated_series;

dated_series!(
    /// Daily close prices of one asset.
    PriceSeries,
    2,
    |p| p.is_finite() && p > 0.0
);

dated_series!(
    /// Daily log returns; each return is dated by the later of its two days.
    ReturnSeries,
    1,
    |r| r.is_finite()
);

/// Two series restricted to their common dates, values aligned.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyncedPair {
    asset_ids: (String, String),
    dates: Vec<Date>,
    values_1: Vec<f64>,
    values_2: Vec<f64>,
}

impl SyncedPair {
    pub fn asset_ids(&self) -> (&str, &str) {
        (&self.asset_ids.0, &self.asset_ids.1)
    }

    pub fn dates(&self) -> &[Date] {
        &self.dates
    }

    pub fn values_1(&self) -> &[f64] {
        &self.values_1
    }

    pub fn values_2(&self) -> &[f64] {
        &self.values_2
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Same pair with the asset roles exchanged.
    pub fn swapped(&self) -> SyncedPair {
        SyncedPair {
            asset_ids: (self.asset_ids.1.clone(), self.asset_ids.0.clone()),
            dates: self.dates.clone(),
            values_1: self.values_2.clone(),
            values_2: self.values_1.clone(),
        }
    }

    /// Build directly from aligned columns (used by simulation helpers).
    pub fn from_columns(
        asset_ids: (String, String),
        dates: Vec<Date>,
        values_1: Vec<f64>,
        values_2: Vec<f64>,
    ) -> Result<Self> {
        if dates.len() != values_1.len() || dates.len() != values_2.len() {
            return Err(Error::Data("synced pair columns have unequal lengths".into()));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Data(format!("dates not strictly increasing at {}", w[1])));
            }
        }
        Ok(SyncedPair { asset_ids, dates, values_1, values_2 })
    }
}

/// Strictly increasing synthetic calendar for generated data: 372 days per
/// year so every (month, day) combination up to 12-31 is exercised.
pub fn synthetic_dates(n: usize) -> Vec<Date> {
    (0..n)
        .map(|i| {
            let (y, r) = (2000 + i / 372, i % 372);
            Date::parse(&format!("{:04}-{:02}-{:02}", y, 1 + r / 31, 1 + r % 31))
                .expect("synthetic dates are valid")
        })
        .collect()
}

/// Load one asset's prices from a CSV file with header `date,price`.
/// Lines starting with `#` are metadata comments and are skipped.
pub fn load_prices(path: &Path, asset_id: &str) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()))
            }
            _ => Error::parse(path, 1, e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "price" {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `date,price`, got {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }

    let mut observations = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(Error::parse(path, line, format!("expected 2 fields, got {}", record.len())));
        }
        let date = Date::parse(&record[0]).map_err(|e| Error::parse(path, line, e.to_string()))?;
        let price: f64 = record[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad price {:?}", &record[1])))?;
        if !price.is_finite() || price <= 0.0 {
            return Err(Error::parse(path, line, format!("non-positive price {price}")));
        }
        if !seen.insert(date.clone()) {
            return Err(Error::parse(path, line, format!("duplicate date {date}")));
        }
        if let Some((prev, _)) = observations.last() {
            if &date <= prev {
                return Err(Error::parse(path, line, format!("dates not increasing at {date}")));
            }
        }
        observations.push((date, price));
    }

    PriceSeries::new(asset_id, observations)
}

/// Daily log returns, `r(t) = ln(p(t)/p(t-1))`, dated by the later day.
pub fn compute_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    let obs = prices.observations();
    if obs.len() < 2 {
        return Err(Error::Data(format!("{}: need at least 2 prices", prices.asset_id())));
    }
    let returns = obs
        .windows(2)
        .map(|w| (w[1].0.clone(), (w[1].1 / w[0].1).ln()))
        .collect();
    ReturnSeries::new(prices.asset_id(), returns)
}

/// Restrict two series to their common dates. Errors if the intersection is
/// empty.
pub fn synchronize_pair<A: DatedSeries, B: DatedSeries>(a: &A, b: &B) -> Result<SyncedPair> {
    let (oa, ob) = (a.observations(), b.observations());
    let mut dates = Vec::new();
    let mut values_1 = Vec::new();
    let mut values_2 = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < oa.len() && j < ob.len() {
        match oa[i].0.cmp(&ob[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dates.push(oa[i].0.clone());
                values_1.push(oa[i].1);
                values_2.push(ob[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    if dates.is_empty() {
        return Err(Error::Data(format!(
            "{} and {} share no dates",
            a.asset_id(),
            b.asset_id()
        )));
    }
    Ok(SyncedPair {
        asset_ids: (a.asset_id().to_owned(), b.asset_id().to_owned()),
        dates,
        values_1,
        values_2,
    })
}
