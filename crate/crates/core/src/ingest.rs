//! Turbine registry and telemetry loading.
//!
//! Registry rows are re-indexed to dense canonical ids `0..n` (sorted by the
//! source id) because every grid and scene array is indexed by turbine id.
//! Telemetry is held as a dense `turbine × step` table of optional readings;
//! a missing reading is `None`, never a sentinel number.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A telemetry channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    /// Output power, MW.
    Power,
    /// Wind speed, m/s.
    Speed,
    /// Ambient temperature, °C.
    Temperature,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::Power, Variable::Speed, Variable::Temperature];

    /// Stable numeric code used in binary containers.
    pub fn code(self) -> u32 {
        match self {
            Variable::Power => 0,
            Variable::Speed => 1,
            Variable::Temperature => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::Power => "power",
            Variable::Speed => "speed",
            Variable::Temperature => "temperature",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "power" => Ok(Variable::Power),
            "speed" => Ok(Variable::Speed),
            "temperature" => Ok(Variable::Temperature),
            other => Err(Error::config(format!("unknown variable `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turbine {
    /// Canonical id, `0..n`.
    pub id: usize,
    /// Id as it appeared in the source registry.
    pub original_id: i64,
    pub latitude: f64,
    pub longitude: f64,
}

/// Canonicalized turbine registry.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbineRegistry {
    turbines: Vec<Turbine>,
    by_original: HashMap<i64, usize>,
}

impl TurbineRegistry {
    /// Builds a registry from `(original_id, latitude, longitude)` rows.
    ///
    /// Canonical ids follow ascending original id, so the result does not
    /// depend on row order.
    pub fn from_rows(rows: impl IntoIterator<Item = (i64, f64, f64)>) -> Result<Self> {
        let mut rows: Vec<(i64, f64, f64)> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        rows.sort_by_key(|r| r.0);
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateTurbineId(w[0].0));
        }

        let mut seen: HashMap<(u64, u64), i64> = HashMap::with_capacity(rows.len());
        for &(id, lat, lon) in &rows {
            if !lat.is_finite() || !lon.is_finite() {
                return Err(Error::config(format!(
                    "turbine {id} has non-finite coordinates"
                )));
            }
            // `+ 0.0` folds -0.0 into 0.0 so the bit patterns compare as numbers do.
            let key = ((lat + 0.0).to_bits(), (lon + 0.0).to_bits());
            if let Some(&first) = seen.get(&key) {
                return Err(Error::DuplicateCoordinate {
                    first,
                    second: id,
                    latitude: lat,
                    longitude: lon,
                });
            }
            seen.insert(key, id);
        }

        let turbines: Vec<Turbine> = rows
            .into_iter()
            .enumerate()
            .map(|(id, (original_id, latitude, longitude))| Turbine {
                id,
                original_id,
                latitude,
                longitude,
            })
            .collect();
        let by_original = turbines.iter().map(|t| (t.original_id, t.id)).collect();
        Ok(Self {
            turbines,
            by_original,
        })
    }

    pub fn len(&self) -> usize {
        self.turbines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turbines.is_empty()
    }

    pub fn turbines(&self) -> &[Turbine] {
        &self.turbines
    }

    pub fn get(&self, id: usize) -> Option<&Turbine> {
        self.turbines.get(id)
    }

    pub fn original_id(&self, id: usize) -> Option<i64> {
        self.turbines.get(id).map(|t| t.original_id)
    }

    pub fn canonical_id(&self, original_id: i64) -> Option<usize> {
        self.by_original.get(&original_id).copied()
    }

    pub fn original_ids(&self) -> Vec<i64> {
        self.turbines.iter().map(|t| t.original_id).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("turbine_id,latitude,longitude\n");
        for t in &self.turbines {
            out.push_str(&format!("{},{},{}\n", t.original_id, t.latitude, t.longitude));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Loads `turbine_id,latitude,longitude` rows (header mandatory).
pub fn load_registry(path: impl AsRef<Path>) -> Result<TurbineRegistry> {
    let path = path.as_ref();
    let rows = read_rows(path, 3, |line, f| {
        let id = parse_field::<i64>(path, line, f[0], "turbine_id")?;
        if id < 0 {
            return Err(parse_err(path, line, "turbine_id must be non-negative"));
        }
        let lat = parse_field::<f64>(path, line, f[1], "latitude")?;
        let lon = parse_field::<f64>(path, line, f[2], "longitude")?;
        Ok((id, lat, lon))
    })?;
    TurbineRegistry::from_rows(rows)
}

/// One variable's readings for every turbine on a uniform time lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetrySeries {
    pub variable: Variable,
    /// Seconds between consecutive steps.
    pub sampling_period: i64,
    /// Epoch seconds of step 0.
    pub start_time: i64,
    values: Vec<Vec<Option<f64>>>,
}

impl TelemetrySeries {
    /// `values[turbine][step]`; every turbine row must have the same length.
    pub fn new(
        variable: Variable,
        start_time: i64,
        sampling_period: i64,
        values: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if sampling_period <= 0 {
            return Err(Error::config("sampling period must be positive"));
        }
        if let Some(first) = values.first() {
            if let Some(row) = values.iter().find(|r| r.len() != first.len()) {
                return Err(Error::Length {
                    left: first.len(),
                    right: row.len(),
                });
            }
        }
        Ok(Self {
            variable,
            sampling_period,
            start_time,
            values,
        })
    }

    pub fn from_dense(
        variable: Variable,
        start_time: i64,
        sampling_period: i64,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let values = values
            .into_iter()
            .map(|row| row.into_iter().map(Some).collect())
            .collect();
        Self::new(variable, start_time, sampling_period, values)
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_turbines(&self) -> usize {
        self.values.len()
    }

    pub fn timestamp(&self, step: usize) -> i64 {
        self.start_time + step as i64 * self.sampling_period
    }

    pub fn get(&self, turbine: usize, step: usize) -> Option<f64> {
        self.values[turbine][step]
    }

    /// Reading that is known to be present (series after gap filling).
    ///
    /// # Panics
    /// If the cell is absent.
    pub fn value(&self, turbine: usize, step: usize) -> f64 {
        self.values[turbine][step]
            .unwrap_or_else(|| panic!("reading for turbine {turbine} at step {step} is absent"))
    }

    pub fn turbine(&self, turbine: usize) -> &[Option<f64>] {
        &self.values[turbine]
    }

    /// All turbines' readings at one step, indexed by turbine id.
    pub fn snapshot(&self, step: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|row| row[step]).collect()
    }

    pub fn gap_count(&self) -> usize {
        self.values
            .iter()
            .map(|row| row.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.gap_count() == 0
    }

    /// True when both series cover the same timestamps and turbines.
    pub fn same_lattice(&self, other: &TelemetrySeries) -> bool {
        self.start_time == other.start_time
            && self.sampling_period == other.sampling_period
            && self.len() == other.len()
            && self.num_turbines() == other.num_turbines()
    }
}

/// Loads `timestamp,turbine_id,value` rows for one variable.
///
/// Timestamps must lie on a uniform lattice whose period is the smallest gap
/// between distinct timestamps. Lattice points or `(timestamp, turbine)`
/// pairs without a row, and rows with an empty value field, become absent
/// cells.
pub fn load_series(
    path: impl AsRef<Path>,
    registry: &TurbineRegistry,
    variable: Variable,
) -> Result<TelemetrySeries> {
    let path = path.as_ref();
    let rows = read_rows(path, 3, |line, f| {
        let ts = parse_field::<i64>(path, line, f[0], "timestamp")?;
        let original = parse_field::<i64>(path, line, f[1], "turbine_id")?;
        let value = if f[2].is_empty() {
            None
        } else {
            let v = parse_field::<f64>(path, line, f[2], "value")?;
            if !v.is_finite() {
                return Err(parse_err(path, line, "value must be finite"));
            }
            Some(v)
        };
        Ok((ts, original, value))
    })?;

    let mut stamps: Vec<i64> = rows.iter().map(|r| r.0).collect();
    stamps.sort_unstable();
    stamps.dedup();
    if stamps.len() < 2 {
        return Err(Error::TooFewTimestamps(stamps.len()));
    }
    let start = stamps[0];
    let period = stamps.windows(2).map(|w| w[1] - w[0]).min().expect("two stamps");
    if let Some(&bad) = stamps.iter().find(|&&t| (t - start) % period != 0) {
        return Err(Error::IrregularSampling {
            start,
            period,
            timestamp: bad,
        });
    }
    let len = ((stamps[stamps.len() - 1] - start) / period + 1) as usize;

    let mut values = vec![vec![None; len]; registry.len()];
    let mut filled = vec![vec![false; len]; registry.len()];
    for (ts, original, value) in rows {
        let id = registry
            .canonical_id(original)
            .ok_or(Error::UnknownTurbine(original))?;
        let step = ((ts - start) / period) as usize;
        if std::mem::replace(&mut filled[id][step], true) {
            return Err(Error::DuplicateReading {
                turbine: original,
                timestamp: ts,
            });
        }
        values[id][step] = value;
    }
    TelemetrySeries::new(variable, start, period, values)
}

/// Writes present cells as `timestamp,turbine_id,value` rows, ordered by
/// timestamp then turbine. Values use the shortest round-trip decimal form,
/// so [`load_series`] reads back the identical table.
pub fn write_series(
    path: impl AsRef<Path>,
    series: &TelemetrySeries,
    registry: &TurbineRegistry,
) -> Result<()> {
    let path = path.as_ref();
    if series.num_turbines() != registry.len() {
        return Err(Error::Length {
            left: series.num_turbines(),
            right: registry.len(),
        });
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(out, "timestamp,turbine_id,value")?;
        for step in 0..series.len() {
            let ts = series.timestamp(step);
            for t in registry.turbines() {
                if let Some(v) = series.get(t.id, step) {
                    writeln!(out, "{ts},{},{v}", t.original_id)?;
                }
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Copy the last present reading forward. A leading gap is an error.
    ForwardFill,
    /// Interpolate interior gaps; edge gaps take the nearest present value.
    #[default]
    Linear,
    /// Any gap is an error.
    Fail,
}

impl FromStr for GapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward_fill" | "forward-fill" => Ok(GapPolicy::ForwardFill),
            "linear" => Ok(GapPolicy::Linear),
            "fail" => Ok(GapPolicy::Fail),
            other => Err(Error::config(format!("unknown gap policy `{other}`"))),
        }
    }
}

/// Counts of cells filled by [`fill_gaps`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FillReport {
    pub filled: usize,
    pub turbines_touched: usize,
}

/// Replaces every absent cell according to `policy`. Present cells are
/// never modified.
pub fn fill_gaps(
    series: &TelemetrySeries,
    policy: GapPolicy,
) -> Result<(TelemetrySeries, FillReport)> {
    let gaps = series.gap_count();
    if gaps == 0 {
        return Ok((series.clone(), FillReport::default()));
    }
    if policy == GapPolicy::Fail {
        return Err(Error::GapPresent(gaps));
    }

    let mut report = FillReport::default();
    let mut values = Vec::with_capacity(series.num_turbines());
    for (turbine, row) in series.values.iter().enumerate() {
        let missing = row.iter().filter(|v| v.is_none()).count();
        if missing == 0 {
            values.push(row.clone());
            continue;
        }
        if missing == row.len() {
            return Err(Error::AllAbsent(turbine));
        }
        let filled = match policy {
            GapPolicy::ForwardFill => forward_fill(turbine, row)?,
            GapPolicy::Linear => linear_fill(row),
            GapPolicy::Fail => unreachable!(),
        };
        report.filled += missing;
        report.turbines_touched += 1;
        values.push(filled.into_iter().map(Some).collect());
    }
    log::info!(
        "filled {} {} readings across {} turbines ({policy:?})",
        report.filled,
        series.variable,
        report.turbines_touched
    );
    let out = TelemetrySeries::new(series.variable, series.start_time, series.sampling_period, values)?;
    Ok((out, report))
}

fn forward_fill(turbine: usize, row: &[Option<f64>]) -> Result<Vec<f64>> {
    let lead = row.iter().take_while(|v| v.is_none()).count();
    if lead > 0 {
        return Err(Error::LeadingGap { turbine, len: lead });
    }
    let mut last = 0.0;
    Ok(row
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect())
}

fn linear_fill(row: &[Option<f64>]) -> Vec<f64> {
    let present: Vec<usize> = (0..row.len()).filter(|&i| row[i].is_some()).collect();
    let mut out = vec![0.0; row.len()];
    let first = present[0];
    let last = present[present.len() - 1];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = match row[i] {
            Some(v) => v,
            None if i < first => row[first].unwrap(),
            None if i > last => row[last].unwrap(),
            None => {
                // Nearest present neighbours on either side.
                let k = present.partition_point(|&p| p < i);
                let (a, b) = (present[k - 1], present[k]);
                let (va, vb) = (row[a].unwrap(), row[b].unwrap());
                va + (vb - va) * (i - a) as f64 / (b - a) as f64
            }
        };
    }
    out
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_field<T: FromStr>(path: &Path, line: u64, raw: &str, name: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} from `{raw}`")))
}

/// Reads a headed CSV file and maps each data row through `parse`.
fn read_rows<T>(
    path: &Path,
    width: usize,
    mut parse: impl FnMut(u64, &[&str]) -> Result<T>,
) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.len() != width || header.iter().any(|h| h.parse::<f64>().is_ok()) {
        return Err(parse_err(
            path,
            1,
            format!("expected a header row with {width} column names"),
        ));
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(parse_err(
                path,
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let fields: Vec<&str> = record.iter().collect();
        out.push(parse(line, &fields)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn two_turbines() -> TurbineRegistry {
        TurbineRegistry::from_rows([(7, 10.0, 20.0), (9, 10.5, 20.0)]).unwrap()
    }

    #[test]
    fn registry_reindexes_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(&dir, "reg.csv", "turbine_id,latitude,longitude\n9,10.5,20.0\n7,10.0,20.0\n");
        let reg = load_registry(&path).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.original_id(0), Some(7));
        assert_eq!(reg.original_id(1), Some(9));
        assert_eq!(reg.canonical_id(9), Some(1));
        assert_eq!(reg.get(0).unwrap().latitude, 10.0);
    }

    #[test]
    fn registry_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write_tmp(&dir, "empty.csv", "turbine_id,latitude,longitude\n");
        assert!(matches!(load_registry(&empty), Err(Error::EmptyRegistry)));

        let dup = write_tmp(&dir, "dup.csv", "turbine_id,latitude,longitude\n1,10.0,20.0\n2,10.0,20.0\n");
        assert!(matches!(load_registry(&dup), Err(Error::DuplicateCoordinate { .. })));

        let bad = write_tmp(&dir, "bad.csv", "turbine_id,latitude,longitude\n1,10.0,20.0\n2,ten,20.0\n");
        match load_registry(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let headless = write_tmp(&dir, "headless.csv", "1,10.0,20.0\n");
        assert!(matches!(load_registry(&headless), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn series_dense_table() {
        let dir = tempfile::tempdir().unwrap();
        let reg = two_turbines();
        let path = write_tmp(
            &dir,
            "p.csv",
            "timestamp,turbine_id,value\n0,7,1\n0,9,2\n600,7,3\n600,9,4\n1200,7,5\n1200,9,6\n",
        );
        let s = load_series(&path, &reg, Variable::Power).unwrap();
        assert_eq!((s.num_turbines(), s.len()), (2, 3));
        assert_eq!(s.gap_count(), 0);
        assert_eq!(s.sampling_period, 600);
        assert_eq!(s.get(1, 2), Some(6.0));
    }

    #[test]
    fn series_missing_row_is_absent() {
        let dir = tempfile::tempdir().unwrap();
        let reg = two_turbines();
        let path = write_tmp(
            &dir,
            "p.csv",
            "timestamp,turbine_id,value\n0,7,1\n0,9,2\n600,7,3\n1200,7,5\n1200,9,6\n",
        );
        let s = load_series(&path, &reg, Variable::Power).unwrap();
        assert_eq!(s.gap_count(), 1);
        assert_eq!(s.get(1, 1), None);
    }

    #[test]
    fn series_errors() {
        let dir = tempfile::tempdir().unwrap();
        let reg = two_turbines();
        let irregular = write_tmp(&dir, "i.csv", "timestamp,turbine_id,value\n0,7,1\n600,7,1\n1300,7,1\n");
        assert!(matches!(
            load_series(&irregular, &reg, Variable::Power),
            Err(Error::IrregularSampling { timestamp: 1300, .. })
        ));
        let unknown = write_tmp(&dir, "u.csv", "timestamp,turbine_id,value\n0,7,1\n600,8,1\n");
        assert!(matches!(
            load_series(&unknown, &reg, Variable::Power),
            Err(Error::UnknownTurbine(8))
        ));
        let dup = write_tmp(&dir, "d.csv", "timestamp,turbine_id,value\n0,7,1\n0,7,2\n600,7,1\n");
        assert!(matches!(
            load_series(&dup, &reg, Variable::Power),
            Err(Error::DuplicateReading { .. })
        ));
    }

    fn one_row(row: Vec<Option<f64>>) -> TelemetrySeries {
        TelemetrySeries::new(Variable::Power, 0, 600, vec![row]).unwrap()
    }

    #[test]
    fn fill_policies() {
        let s = one_row(vec![Some(1.0), None, Some(3.0)]);
        let (lin, report) = fill_gaps(&s, GapPolicy::Linear).unwrap();
        assert_eq!(lin.turbine(0), &[Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(report.filled, 1);
        let (ff, _) = fill_gaps(&s, GapPolicy::ForwardFill).unwrap();
        assert_eq!(ff.turbine(0), &[Some(1.0), Some(1.0), Some(3.0)]);
        assert!(matches!(fill_gaps(&s, GapPolicy::Fail), Err(Error::GapPresent(1))));

        let lead = one_row(vec![None, Some(2.0)]);
        assert!(matches!(
            fill_gaps(&lead, GapPolicy::ForwardFill),
            Err(Error::LeadingGap { turbine: 0, len: 1 })
        ));
        let (edge, _) = fill_gaps(&lead, GapPolicy::Linear).unwrap();
        assert_eq!(edge.turbine(0), &[Some(2.0), Some(2.0)]);

        let none = one_row(vec![None, None]);
        assert!(matches!(fill_gaps(&none, GapPolicy::Linear), Err(Error::AllAbsent(0))));
    }

    #[test]
    fn unequal_rows_rejected() {
        let r = TelemetrySeries::new(Variable::Power, 0, 600, vec![vec![Some(1.0)], vec![]]);
        assert!(r.is_err());
        assert!(TelemetrySeries::new(Variable::Power, 0, 0, vec![]).is_err());
    }
}
