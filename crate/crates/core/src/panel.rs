//! Panel data: monthly (users, vacancies, hires) observations per region,
//! CSV ingestion, market diagnostics and baseline normalization.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period {
    year: i32,
    month: u8,
}

impl Period {
    pub fn new(year: i32, month: u8) -> Result<Self, PanelError> {
        if !(1..=12).contains(&month) || !(0..=9999).contains(&year) {
            return Err(PanelError::InvalidPeriod(format!("{year:04}-{month:02}")));
        }
        Ok(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u8 {
        self.month
    }

    /// Months since year 0, January.
    pub fn ordinal(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: (ordinal.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn succ(self) -> Self {
        self.offset(1)
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Period {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PanelError::InvalidPeriod(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse::<i32>().map_err(|_| bad())?;
        let month = m.parse::<u8>().map_err(|_| bad())?;
        Period::new(year, month).map_err(|_| bad())
    }
}

impl Serialize for Period {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One period x region record.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelObservation {
    pub period: Period,
    pub region: Option<String>,
    pub users: f64,
    pub vacancies: f64,
    pub hires: f64,
}

impl PanelObservation {
    pub fn new(period: Period, users: f64, vacancies: f64, hires: f64) -> Self {
        Self { period, region: None, users, vacancies, hires }
    }

    pub fn with_region(mut self, region: impl Into<String>) -> Self {
        self.region = Some(region.into());
        self
    }

    fn validate(&self) -> Result<(), String> {
        for (name, v) in [("users", self.users), ("vacancies", self.vacancies), ("hires", self.hires)] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
            if v < 0.0 {
                return Err(format!("{name} is negative ({v})"));
            }
        }
        Ok(())
    }
}

/// A missing month inside a region's observed span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gap {
    pub region: Option<String>,
    pub period: Period,
}

/// Validated panel, sorted by (region, period). Gaps are reported, never filled.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    label: String,
    observations: Vec<PanelObservation>,
    gaps: Vec<Gap>,
}

impl Panel {
    /// Validates, sorts and gap-scans a set of observations.
    pub fn new(label: impl Into<String>, mut observations: Vec<PanelObservation>) -> Result<Self, PanelError> {
        if observations.is_empty() {
            return Err(PanelError::Empty);
        }
        let mut invalid = Vec::new();
        for (i, obs) in observations.iter().enumerate() {
            if let Err(message) = obs.validate() {
                invalid.push(RowError { row: i + 1, message });
            }
        }
        if !invalid.is_empty() {
            return Err(PanelError::InvalidRows(invalid));
        }
        observations.sort_by(|a, b| (&a.region, a.period).cmp(&(&b.region, b.period)));
        let duplicates: Vec<_> = observations
            .windows(2)
            .filter(|w| w[0].region == w[1].region && w[0].period == w[1].period)
            .map(|w| Gap { region: w[0].region.clone(), period: w[0].period })
            .collect();
        if !duplicates.is_empty() {
            return Err(PanelError::Duplicate(duplicates));
        }
        let mut gaps = Vec::new();
        for w in observations.windows(2) {
            if w[0].region != w[1].region {
                continue;
            }
            let mut p = w[0].period.succ();
            while p < w[1].period {
                gaps.push(Gap { region: w[0].region.clone(), period: p });
                p = p.succ();
            }
        }
        Ok(Self { label: label.into(), observations, gaps })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn observations(&self) -> &[PanelObservation] {
        &self.observations
    }

    pub fn gaps(&self) -> &[Gap] {
        &self.gaps
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Distinct regions in sort order.
    pub fn regions(&self) -> Vec<Option<String>> {
        let mut out: Vec<Option<String>> = Vec::new();
        for obs in &self.observations {
            if out.last() != Some(&obs.region) {
                out.push(obs.region.clone());
            }
        }
        out
    }

    /// Sub-panel restricted to one region.
    pub fn region(&self, region: Option<&str>) -> Result<Panel, PanelError> {
        let obs: Vec<_> = self
            .observations
            .iter()
            .filter(|o| o.region.as_deref() == region)
            .cloned()
            .collect();
        if obs.is_empty() {
            return Err(PanelError::UnknownRegion(region.unwrap_or("<none>").to_string()));
        }
        Panel::new(self.label.clone(), obs)
    }

    /// Splits the panel into one sub-panel per region.
    pub fn split_regions(&self) -> Vec<Panel> {
        let mut groups: BTreeMap<Option<String>, Vec<PanelObservation>> = BTreeMap::new();
        for obs in &self.observations {
            groups.entry(obs.region.clone()).or_default().push(obs.clone());
        }
        groups
            .into_values()
            .map(|obs| Panel::new(self.label.clone(), obs).expect("sub-panel of a valid panel"))
            .collect()
    }
}

/// Column names used when reading a panel CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub period: String,
    pub region: Option<String>,
    pub users: String,
    pub vacancies: String,
    pub hires: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            period: "period".into(),
            region: Some("region".into()),
            users: "users".into(),
            vacancies: "vacancies".into(),
            hires: "hires".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("duplicate (period, region) entries: {}", list_keys(.0))]
    Duplicate(Vec<Gap>),
    #[error("input has no data rows")]
    Empty,
    #[error("{} invalid row(s): {}", .0.len(), .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidRows(Vec<RowError>),
    #[error("invalid period `{0}`, expected YYYY-MM")]
    InvalidPeriod(String),
    #[error("region `{0}` not present in panel")]
    UnknownRegion(String),
    #[error("baseline period {0} not present in series")]
    BaselineMissing(Period),
    #[error("baseline value at {period} is {value}; cannot normalize")]
    NonNormalizable { period: Period, value: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn list_keys(keys: &[Gap]) -> String {
    keys.iter()
        .map(|k| match &k.region {
            Some(r) => format!("{}/{}", k.period, r),
            None => k.period.to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Reads a panel from CSV text with a header row.
pub fn ingest_panel<R: Read>(source: R, schema: &ColumnMapping, label: &str) -> Result<Panel, PanelError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col = |name: &str| find(name).ok_or_else(|| PanelError::MissingColumn(name.to_string()));
    let period_idx = col(&schema.period)?;
    let users_idx = col(&schema.users)?;
    let vacancies_idx = col(&schema.vacancies)?;
    let hires_idx = col(&schema.hires)?;
    let region_idx = schema.region.as_deref().and_then(find);

    let mut observations = Vec::new();
    let mut errors = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { row, message: e.to_string() });
                continue;
            }
        };
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let number = |idx: usize, name: &str| -> Result<f64, String> {
            field(idx)
                .parse::<f64>()
                .map_err(|_| format!("{name}: cannot parse `{}` as a number", field(idx)))
        };
        let parsed = (|| -> Result<PanelObservation, String> {
            let period: Period = field(period_idx).parse().map_err(|e: PanelError| e.to_string())?;
            let obs = PanelObservation {
                period,
                region: region_idx.map(field).filter(|r| !r.is_empty()).map(str::to_string),
                users: number(users_idx, &schema.users)?,
                vacancies: number(vacancies_idx, &schema.vacancies)?,
                hires: number(hires_idx, &schema.hires)?,
            };
            obs.validate()?;
            Ok(obs)
        })();
        match parsed {
            Ok(obs) => observations.push(obs),
            Err(message) => errors.push(RowError { row, message }),
        }
    }
    if !errors.is_empty() {
        return Err(PanelError::InvalidRows(errors));
    }
    Panel::new(label, observations)
}

/// Writes a panel in the default column layout. `ingest_panel` reads it back unchanged.
pub fn write_panel<W: Write>(panel: &Panel, sink: W) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["period", "region", "users", "vacancies", "hires"])?;
    for o in panel.observations() {
        w.write_record([
            o.period.to_string(),
            o.region.clone().unwrap_or_default(),
            o.users.to_string(),
            o.vacancies.to_string(),
            o.hires.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Tightness and finding rates for one observation. `None` marks a zero denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDiagnostics {
    pub period: Period,
    pub region: Option<String>,
    pub tightness: Option<f64>,
    pub job_finding_rate: Option<f64>,
    pub worker_finding_rate: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn compute_diagnostics(panel: &Panel) -> Vec<MarketDiagnostics> {
    panel
        .observations()
        .iter()
        .map(|o| MarketDiagnostics {
            period: o.period,
            region: o.region.clone(),
            tightness: ratio(o.vacancies, o.users),
            job_finding_rate: ratio(o.hires, o.users),
            worker_finding_rate: ratio(o.hires, o.vacancies),
        })
        .collect()
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_diagnostics<W: Write>(rows: &[MarketDiagnostics], sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["period", "region", "tightness", "job_finding_rate", "worker_finding_rate"])?;
    for r in rows {
        w.write_record([
            r.period.to_string(),
            r.region.clone().unwrap_or_default(),
            fmt_opt(r.tightness),
            fmt_opt(r.job_finding_rate),
            fmt_opt(r.worker_finding_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Series divided by its value at a baseline period.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub baseline_period: Period,
    pub values: Vec<(Period, f64)>,
}

impl NormalizedSeries {
    pub fn get(&self, period: Period) -> Option<f64> {
        self.values.iter().find(|(p, _)| *p == period).map(|(_, v)| *v)
    }
}

pub fn normalize_to_baseline(series: &[(Period, f64)], baseline: Period) -> Result<NormalizedSeries, PanelError> {
    let base = series
        .iter()
        .find(|(p, _)| *p == baseline)
        .map(|(_, v)| *v)
        .ok_or(PanelError::BaselineMissing(baseline))?;
    if !(base > 0.0 && base.is_finite()) {
        return Err(PanelError::NonNormalizable { period: baseline, value: base });
    }
    Ok(NormalizedSeries {
        baseline_period: baseline,
        values: series.iter().map(|&(p, v)| (p, if p == baseline { 1.0 } else { v / base })).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Period {
        s.parse().unwrap()
    }

    #[test]
    fn period_parse_and_display() {
        assert_eq!(p("2019-12").to_string(), "2019-12");
        assert_eq!(p("2019-12").succ(), p("2020-01"));
        assert!("2019-13".parse::<Period>().is_err());
        assert!("2019-1".parse::<Period>().is_err());
        assert!("201912".parse::<Period>().is_err());
        assert_eq!(Period::from_ordinal(p("1999-07").ordinal()), p("1999-07"));
    }

    #[test]
    fn ingest_two_rows() {
        let csv = "period,users,vacancies,hires\n2019-12,100,80,60\n2020-01,110,90,70\n";
        let panel = ingest_panel(csv.as_bytes(), &ColumnMapping::default(), "t").unwrap();
        assert_eq!(panel.len(), 2);
        assert!(panel.gaps().is_empty());
        assert_eq!(panel.observations()[1].hires, 70.0);
    }

    #[test]
    fn ingest_reports_gap() {
        let csv = "period,users,vacancies,hires\n2019-12,100,80,60\n2020-02,110,90,70\n";
        let panel = ingest_panel(csv.as_bytes(), &ColumnMapping::default(), "t").unwrap();
        assert_eq!(panel.len(), 2);
        assert_eq!(panel.gaps(), &[Gap { region: None, period: p("2020-01") }]);
    }

    #[test]
    fn header_only_is_empty_error() {
        let csv = "period,users,vacancies,hires\n";
        let err = ingest_panel(csv.as_bytes(), &ColumnMapping::default(), "t").unwrap_err();
        assert!(matches!(err, PanelError::Empty));
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "period,users,hires\n2019-12,1,1\n";
        match ingest_panel(csv.as_bytes(), &ColumnMapping::default(), "t").unwrap_err() {
            PanelError::MissingColumn(c) => assert_eq!(c, "vacancies"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicates_listed() {
        let csv = "period,region,users,vacancies,hires\n2019-12,A,1,1,1\n2019-12,A,2,2,2\n2019-12,B,1,1,1\n";
        match ingest_panel(csv.as_bytes(), &ColumnMapping::default(), "t").unwrap_err() {
            PanelError::Duplicate(d) => {
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].region.as_deref(), Some("A"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_rows_are_collected() {
        let csv = "period,users,vacancies,hires\n2019-12,-1,1,1\n2020-01,x,1,1\n2020-02,1,1,1\n";
        match ingest_panel(csv.as_bytes(), &ColumnMapping::default(), "t").unwrap_err() {
            PanelError::InvalidRows(rows) => {
                assert_eq!(rows.iter().map(|r| r.row).collect::<Vec<_>>(), vec![1, 2]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn remapped_columns() {
        let csv = "month,pref,U,V,H\n2019-12,Tokyo,10,5,4\n";
        let schema = ColumnMapping {
            period: "month".into(),
            region: Some("pref".into()),
            users: "U".into(),
            vacancies: "V".into(),
            hires: "H".into(),
        };
        let panel = ingest_panel(csv.as_bytes(), &schema, "t").unwrap();
        assert_eq!(panel.observations()[0].region.as_deref(), Some("Tokyo"));
    }

    #[test]
    fn hires_may_exceed_users() {
        let obs = vec![PanelObservation::new(p("2020-01"), 100.0, 162.5, 130.0)];
        assert!(Panel::new("t", obs).is_ok());
    }

    #[test]
    fn diagnostics_examples() {
        let panel = Panel::new(
            "t",
            vec![
                PanelObservation::new(p("2020-01"), 100.0, 100.0, 80.0),
                PanelObservation::new(p("2020-02"), 100.0, 162.5, 130.0),
                PanelObservation::new(p("2020-03"), 0.0, 50.0, 0.0),
            ],
        )
        .unwrap();
        let d = compute_diagnostics(&panel);
        assert_eq!(d[0].tightness, Some(1.0));
        assert_eq!(d[0].job_finding_rate, Some(0.8));
        assert_eq!(d[0].worker_finding_rate, Some(0.8));
        assert_eq!(d[1].job_finding_rate, Some(1.3));
        assert_eq!(d[1].worker_finding_rate, Some(0.8));
        assert_eq!(d[2].tightness, None);
        assert_eq!(d[2].job_finding_rate, None);
        assert_eq!(d[2].worker_finding_rate, Some(0.0));

        let mut out = Vec::new();
        write_diagnostics(&d, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(3).unwrap(), "2020-03,,,,0");
    }

    #[test]
    fn normalize_examples() {
        let s = [(p("2019-12"), 2.0), (p("2020-01"), 3.0)];
        let n = normalize_to_baseline(&s, p("2019-12")).unwrap();
        assert_eq!(n.values, vec![(p("2019-12"), 1.0), (p("2020-01"), 1.5)]);

        let flat = [(p("2019-12"), 4.2), (p("2020-01"), 4.2), (p("2020-02"), 4.2)];
        let n = normalize_to_baseline(&flat, p("2020-01")).unwrap();
        assert!(n.values.iter().all(|&(_, v)| v == 1.0));

        let seven = [(p("2019-12"), 0.3), (p("2023-05"), 2.1)];
        let n = normalize_to_baseline(&seven, p("2019-12")).unwrap();
        assert!((n.get(p("2023-05")).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_errors() {
        let s = [(p("2019-12"), 0.0), (p("2020-01"), 3.0)];
        assert!(matches!(
            normalize_to_baseline(&s, p("2021-01")),
            Err(PanelError::BaselineMissing(_))
        ));
        assert!(matches!(
            normalize_to_baseline(&s, p("2019-12")),
            Err(PanelError::NonNormalizable { .. })
        ));
    }

    #[test]
    fn split_regions_keeps_order() {
        let panel = Panel::new(
            "t",
            vec![
                PanelObservation::new(p("2020-01"), 1.0, 1.0, 1.0).with_region("Tokyo"),
                PanelObservation::new(p("2020-01"), 1.0, 1.0, 1.0).with_region("Aichi"),
                PanelObservation::new(p("2020-02"), 1.0, 1.0, 1.0).with_region("Aichi"),
            ],
        )
        .unwrap();
        let parts = panel.split_regions();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].observations()[0].region.as_deref(), Some("Aichi"));
        assert_eq!(parts[0].len(), 2);
        assert_eq!(panel.regions().len(), 2);
    }
}
