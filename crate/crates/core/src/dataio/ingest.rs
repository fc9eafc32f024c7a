//! Daily series ingestion: parsing, leap-day removal, gap filling and
//! same-day-of-year imputation of missing values.

use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShmmError};
use crate::rng::{stream_rng, streams};

/// A column selected by header name (case-insensitive) or 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    fn resolve(&self, header: Option<&[String]>) -> Result<usize> {
        match self {
            ColumnRef::Index(i) => Ok(*i),
            ColumnRef::Name(name) => header
                .and_then(|h| h.iter().position(|c| c.eq_ignore_ascii_case(name)))
                .ok_or_else(|| ShmmError::Data(format!("column {name:?} not found in header"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateFormat {
    /// `YYYY-MM-DD`
    Iso,
    /// `YYYYMMDD`
    Compact,
    Auto,
}

impl DateFormat {
    fn parse(self, s: &str) -> Option<NaiveDate> {
        let iso = || NaiveDate::parse_from_str(s, "%Y-%m-%d").ok();
        let compact = || {
            (s.len() == 8 && s.bytes().all(|b| b.is_ascii_digit()))
                .then(|| NaiveDate::parse_from_str(s, "%Y%m%d").ok())
                .flatten()
        };
        match self {
            DateFormat::Iso => iso(),
            DateFormat::Compact => compact(),
            DateFormat::Auto => iso().or_else(compact),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub delimiter: u8,
    pub date_column: ColumnRef,
    pub value_column: ColumnRef,
    /// Rows whose flag is non-zero are treated as missing.
    pub quality_column: Option<ColumnRef>,
    pub date_format: DateFormat,
    /// Raw values strictly below this are missing.
    pub missing_below: Option<f64>,
    /// Multiplier applied to raw values (e.g. 0.1 for tenths of a millimetre).
    pub scale: f64,
    /// Drop leading days so that the series starts on 1 January.
    pub start_at_year_start: bool,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            delimiter: b',',
            date_column: ColumnRef::Index(0),
            value_column: ColumnRef::Index(1),
            quality_column: None,
            date_format: DateFormat::Auto,
            missing_below: Some(0.0),
            scale: 1.0,
            start_at_year_start: true,
            seed: 0,
        }
    }
}

impl IngestConfig {
    /// ECA&D station files: `STAID, SOUID, DATE, RR, Q_RR` with `RR` in 0.1 mm.
    pub fn ecad(seed: u64) -> Self {
        Self {
            delimiter: b',',
            date_column: ColumnRef::Name("DATE".into()),
            value_column: ColumnRef::Name("RR".into()),
            quality_column: Some(ColumnRef::Name("Q_RR".into())),
            date_format: DateFormat::Compact,
            missing_below: Some(0.0),
            scale: 0.1,
            start_at_year_start: true,
            seed,
        }
    }
}

/// One preprocessing event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    DroppedLeapDay {
        line: usize,
        date: String,
    },
    DroppedBeforeYearStart {
        count: usize,
    },
    MissingValue {
        line: usize,
        date: String,
        raw: String,
    },
    GapFilled {
        date: String,
    },
    Imputed {
        index: usize,
        day_of_year: usize,
        value: f64,
        pool_size: usize,
        source_index: usize,
    },
}

/// A preprocessed series on a 365-day calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub values: Vec<f64>,
    /// Day of year in `1..=period` for every value.
    pub day_of_year: Vec<usize>,
    pub dates: Option<Vec<NaiveDate>>,
    pub period: usize,
    pub provenance: Vec<Provenance>,
}

impl DailySeries {
    /// A series with no calendar, phase taken from position.
    pub fn from_values(values: Vec<f64>, period: usize) -> Self {
        let day_of_year = (0..values.len()).map(|i| i % period + 1).collect();
        Self {
            values,
            day_of_year,
            dates: None,
            period,
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn imputed_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| matches!(p, Provenance::Imputed { .. }))
            .count()
    }
}

/// Day of year on a 365-day calendar (29 February has no slot).
fn day_of_year_365(d: NaiveDate) -> usize {
    let ordinal = d.ordinal() as usize;
    let leap = NaiveDate::from_ymd_opt(d.year(), 2, 29).is_some();
    if leap && ordinal > 59 {
        ordinal - 1
    } else {
        ordinal
    }
}

fn split_line(line: &str, delimiter: u8) -> Vec<String> {
    if delimiter == b' ' {
        line.split_whitespace().map(str::to_string).collect()
    } else {
        line.split(delimiter as char)
            .map(|f| f.trim().to_string())
            .collect()
    }
}

struct Row {
    line: usize,
    date: NaiveDate,
    value: Option<f64>,
    raw: String,
}

/// Read a dated daily series.
pub fn ingest(path: &Path, cfg: &IngestConfig) -> Result<DailySeries> {
    let text = fs::read_to_string(path)?;
    ingest_str(&text, cfg)
}

pub fn ingest_str(text: &str, cfg: &IngestConfig) -> Result<DailySeries> {
    let lines: Vec<&str> = text.lines().collect();
    let names: Vec<&str> = [
        Some(&cfg.date_column),
        Some(&cfg.value_column),
        cfg.quality_column.as_ref(),
    ]
    .into_iter()
    .flatten()
    .filter_map(|c| match c {
        ColumnRef::Name(n) => Some(n.as_str()),
        ColumnRef::Index(_) => None,
    })
    .collect();

    let (header, body_start) = if names.is_empty() {
        (None, 0)
    } else {
        let pos = lines
            .iter()
            .position(|l| {
                let fields = split_line(l, cfg.delimiter);
                names
                    .iter()
                    .all(|n| fields.iter().any(|f| f.eq_ignore_ascii_case(n)))
            })
            .ok_or_else(|| {
                ShmmError::Data(format!("no header line containing columns {names:?}"))
            })?;
        (Some(split_line(lines[pos], cfg.delimiter)), pos + 1)
    };
    let date_col = cfg.date_column.resolve(header.as_deref())?;
    let value_col = cfg.value_column.resolve(header.as_deref())?;
    let quality_col = cfg
        .quality_column
        .as_ref()
        .map(|c| c.resolve(header.as_deref()))
        .transpose()?;

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut seen_data = header.is_some();
    for (offset, line) in lines[body_start..].iter().enumerate() {
        let lineno = body_start + offset + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_line(line, cfg.delimiter);
        let date = fields.get(date_col).and_then(|f| cfg.date_format.parse(f));
        let Some(date) = date else {
            if seen_data {
                errors.push(format!("line {lineno}: cannot parse date in {line:?}"));
            }
            // preamble before the first data row of a header-less file
            continue;
        };
        seen_data = true;
        let Some(raw) = fields.get(value_col) else {
            errors.push(format!("line {lineno}: no value column {value_col}"));
            continue;
        };
        let parsed = if raw.is_empty()
            || raw.eq_ignore_ascii_case("na")
            || raw.eq_ignore_ascii_case("nan")
        {
            None
        } else {
            match raw.parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    errors.push(format!("line {lineno}: cannot parse value {raw:?}"));
                    continue;
                }
            }
        };
        let flagged = match quality_col {
            Some(q) => match fields.get(q).map(|f| f.parse::<i64>()) {
                Some(Ok(flag)) => flag != 0,
                _ => {
                    errors.push(format!("line {lineno}: cannot parse quality flag"));
                    continue;
                }
            },
            None => false,
        };
        let value = parsed
            .filter(|v| v.is_finite() && !flagged && cfg.missing_below.is_none_or(|thr| *v >= thr));
        rows.push(Row {
            line: lineno,
            date,
            value: value.map(|v| v * cfg.scale),
            raw: raw.clone(),
        });
    }
    if !errors.is_empty() {
        let shown: Vec<&String> = errors.iter().take(20).collect();
        return Err(ShmmError::Data(format!(
            "{} unparseable rows:\n{}",
            errors.len(),
            shown
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join("\n")
        )));
    }
    if rows.is_empty() {
        return Err(ShmmError::Data("no data rows".into()));
    }
    for w in rows.windows(2) {
        if w[1].date <= w[0].date {
            return Err(ShmmError::Data(format!(
                "line {}: date {} does not follow {} (line {})",
                w[1].line, w[1].date, w[0].date, w[0].line
            )));
        }
    }
    build_series(rows, cfg)
}

fn build_series(rows: Vec<Row>, cfg: &IngestConfig) -> Result<DailySeries> {
    let mut provenance = Vec::new();
    let mut values: Vec<Option<f64>> = Vec::new();
    let mut dates = Vec::new();
    let mut prev: Option<NaiveDate> = None;
    for row in rows {
        if let Some(p) = prev {
            let mut d = p.succ_opt().expect("date in range");
            while d < row.date {
                if !(d.month() == 2 && d.day() == 29) {
                    provenance.push(Provenance::GapFilled {
                        date: d.to_string(),
                    });
                    values.push(None);
                    dates.push(d);
                }
                d = d.succ_opt().expect("date in range");
            }
        }
        prev = Some(row.date);
        if row.date.month() == 2 && row.date.day() == 29 {
            provenance.push(Provenance::DroppedLeapDay {
                line: row.line,
                date: row.date.to_string(),
            });
            continue;
        }
        if row.value.is_none() {
            provenance.push(Provenance::MissingValue {
                line: row.line,
                date: row.date.to_string(),
                raw: row.raw.clone(),
            });
        }
        values.push(row.value);
        dates.push(row.date);
    }
    if cfg.start_at_year_start {
        let skip = dates
            .iter()
            .position(|d| day_of_year_365(*d) == 1)
            .unwrap_or(dates.len());
        if skip > 0 {
            provenance.push(Provenance::DroppedBeforeYearStart { count: skip });
            values.drain(..skip);
            dates.drain(..skip);
        }
        if values.is_empty() {
            return Err(ShmmError::Data(
                "no data on or after the first 1 January".into(),
            ));
        }
    }
    let day_of_year: Vec<usize> = dates.iter().map(|d| day_of_year_365(*d)).collect();
    let filled = impute(&values, &day_of_year, 365, cfg.seed, &mut provenance)?;
    Ok(DailySeries {
        values: filled,
        day_of_year,
        dates: Some(dates),
        period: 365,
        provenance,
    })
}

/// Replace each missing value by a uniform draw from the observed values that
/// share its day of year.
fn impute(
    values: &[Option<f64>],
    day_of_year: &[usize],
    period: usize,
    seed: u64,
    provenance: &mut Vec<Provenance>,
) -> Result<Vec<f64>> {
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); period + 1];
    for (i, v) in values.iter().enumerate() {
        if v.is_some() {
            pools[day_of_year[i]].push(i);
        }
    }
    let empty: Vec<usize> = (0..values.len())
        .filter(|&i| values[i].is_none() && pools[day_of_year[i]].is_empty())
        .map(|i| day_of_year[i])
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !empty.is_empty() {
        return Err(ShmmError::Data(format!(
            "cannot impute: every value is missing on day(s) of year {empty:?}"
        )));
    }
    let mut rng = stream_rng(seed, streams::IMPUTATION);
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(x) => out.push(*x),
            None => {
                let pool = &pools[day_of_year[i]];
                let src = pool[rng.random_range(0..pool.len())];
                let value = values[src].expect("pool holds observed values");
                provenance.push(Provenance::Imputed {
                    index: i,
                    day_of_year: day_of_year[i],
                    value,
                    pool_size: pool.len(),
                    source_index: src,
                });
                out.push(value);
            }
        }
    }
    Ok(out)
}

/// One value per line (`NA` or empty for missing); phase from position.
pub fn ingest_plain(
    path: &Path,
    period: usize,
    missing_below: Option<f64>,
    seed: u64,
) -> Result<DailySeries> {
    let text = fs::read_to_string(path)?;
    plain_from_str(&text, period, missing_below, seed)
}

pub fn plain_from_str(
    text: &str,
    period: usize,
    missing_below: Option<f64>,
    seed: u64,
) -> Result<DailySeries> {
    if period == 0 {
        return Err(ShmmError::InvalidArgument("period must be >= 1".into()));
    }
    let mut values = Vec::new();
    let mut provenance = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.trim_end().lines().enumerate() {
        let s = line.trim();
        let v = if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
            None
        } else {
            match s.parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    errors.push(format!("line {}: cannot parse value {s:?}", i + 1));
                    continue;
                }
            }
        };
        let v = v.filter(|x| x.is_finite() && missing_below.is_none_or(|thr| *x >= thr));
        if v.is_none() {
            provenance.push(Provenance::MissingValue {
                line: i + 1,
                date: String::new(),
                raw: s.to_string(),
            });
        }
        values.push(v);
    }
    if !errors.is_empty() {
        return Err(ShmmError::Data(errors.join("\n")));
    }
    if values.is_empty() {
        return Err(ShmmError::Data("no data rows".into()));
    }
    let day_of_year: Vec<usize> = (0..values.len()).map(|i| i % period + 1).collect();
    let filled = impute(&values, &day_of_year, period, seed, &mut provenance)?;
    Ok(DailySeries {
        values: filled,
        day_of_year,
        dates: None,
        period,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn daily_file(start: NaiveDate, end: NaiveDate, value: impl Fn(NaiveDate) -> i64) -> String {
        let mut s = String::from("SOME PREAMBLE TEXT\nFILE FORMAT (MISSING VALUE CODE IS -9999):\n\nSTAID, SOUID,    DATE,   RR, Q_RR\n");
        let mut d = start;
        while d <= end {
            let v = value(d);
            let q = if v == -9999 { 9 } else { 0 };
            let _ = writeln!(
                s,
                "{:>6},{:>6},{},{:>5},{:>5}",
                1,
                2,
                d.format("%Y%m%d"),
                v,
                q
            );
            d = d.succ_opt().unwrap();
        }
        s
    }

    #[test]
    fn sixty_six_years_give_24090_days() {
        let text = daily_file(
            NaiveDate::from_ymd_opt(1950, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2015, 12, 31).unwrap(),
            |d| d.ordinal() as i64 % 7,
        );
        let s = ingest_str(&text, &IngestConfig::ecad(0)).unwrap();
        assert_eq!(s.len(), 24090);
        let leap = s
            .provenance
            .iter()
            .filter(|p| matches!(p, Provenance::DroppedLeapDay { .. }))
            .count();
        assert_eq!(leap, 16);
        assert_eq!(s.day_of_year[0], 1);
        assert_eq!(s.day_of_year[364], 365);
        assert_eq!(s.day_of_year[365], 1);
        assert!((s.values[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn clean_series_has_empty_provenance() {
        let text = daily_file(
            NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2002, 12, 31).unwrap(),
            |_| 3,
        );
        let s = ingest_str(&text, &IngestConfig::ecad(0)).unwrap();
        assert!(s.provenance.is_empty());
        assert_eq!(s.len(), 730);
    }

    #[test]
    fn missing_value_is_imputed_from_same_day() {
        let target = NaiveDate::from_ymd_opt(2003, 2, 6).unwrap();
        let text = daily_file(
            NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2005, 12, 31).unwrap(),
            |d| {
                if d == target {
                    -9999
                } else {
                    10 * d.year() as i64 + d.ordinal() as i64
                }
            },
        );
        let s = ingest_str(&text, &IngestConfig::ecad(4)).unwrap();
        let imputed: Vec<&Provenance> = s
            .provenance
            .iter()
            .filter(|p| matches!(p, Provenance::Imputed { .. }))
            .collect();
        assert_eq!(imputed.len(), 1);
        let Provenance::Imputed {
            index,
            day_of_year,
            value,
            pool_size,
            source_index,
        } = imputed[0]
        else {
            unreachable!()
        };
        assert_eq!(*day_of_year, 37);
        assert_eq!(*pool_size, 4);
        assert_eq!(s.day_of_year[*source_index], 37);
        assert_eq!(s.values[*index], *value);
        assert_eq!(s.values[*index], s.values[*source_index]);
        let again = ingest_str(&text, &IngestConfig::ecad(4)).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn unparseable_rows_report_line_numbers() {
        let text = "DATE,RR\n2001-01-01,1\n2001-01-02,x\n2001-01-03,2\n";
        let cfg = IngestConfig {
            date_column: ColumnRef::Name("DATE".into()),
            value_column: ColumnRef::Name("RR".into()),
            ..Default::default()
        };
        match ingest_str(text, &cfg) {
            Err(ShmmError::Data(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_missing_day_is_an_error() {
        let text = daily_file(
            NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2002, 12, 31).unwrap(),
            |d| if d.ordinal() == 100 { -9999 } else { 1 },
        );
        match ingest_str(&text, &IngestConfig::ecad(0)) {
            Err(ShmmError::Data(msg)) => assert!(msg.contains("100"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calendar_gaps_are_filled_and_imputed() {
        let mut text = String::new();
        let mut d = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        while d.year() < 2003 {
            if d != NaiveDate::from_ymd_opt(2001, 1, 2).unwrap() {
                let v = if d.year() == 2001 { 1 } else { 6 };
                let _ = writeln!(text, "{d},{v}");
            }
            d = d.succ_opt().unwrap();
        }
        let s = ingest_str(&text, &IngestConfig::default()).unwrap();
        assert!(s
            .provenance
            .iter()
            .any(|p| matches!(p, Provenance::GapFilled { date } if date == "2001-01-02")));
        // the only other day-2 observation is 6
        assert_eq!(s.values[1], 6.0);
    }

    #[test]
    fn plain_values() {
        let s = plain_from_str("1.5\nNA\n2\n3\n", 2, None, 0).unwrap();
        assert_eq!(s.day_of_year, vec![1, 2, 1, 2]);
        assert_eq!(s.values[1], 3.0);
        assert!(plain_from_str("1\nfoo\n", 2, None, 0).is_err());
    }
}
