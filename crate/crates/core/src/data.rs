//! Dataset loading, splitting, scaling, windowing and synthetic generation.
//!
//! On-disk layout of a dataset directory:
//!
//! * `values.csv`: header row of node ids, then one row of decimals per timestamp
//! * `timestamps.csv`: one ISO-8601 local time per row
//! * `adjacency.csv` (optional): `N` rows of `N` nonnegative decimals
//! * `mask.csv` (optional): same layout as `values.csv` with 0/1 entries
//! * `meta`: `key=value` lines with `name` and `granularity_minutes`
//!
//! Missing readings are stored as 0. Without a mask file, the mask is
//! derived as `value != 0`.

use crate::error::{Error, Result};
use crate::timefeatures::{extract_coords, AuxCoordinates};
use chrono::{Duration, NaiveDate, NaiveDateTime};
use ndarray::{s, Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use std::fs;
use std::path::Path;

pub const VALUES_FILE: &str = "values.csv";
pub const TIMESTAMPS_FILE: &str = "timestamps.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const MASK_FILE: &str = "mask.csv";
pub const META_FILE: &str = "meta";

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub node_ids: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    pub granularity_minutes: u32,
    /// `T × N` readings; masked cells hold 0.
    pub values: Array2<f64>,
    /// `true` where a reading was observed.
    pub mask: Array2<bool>,
    pub adjacency: Option<Array2<f64>>,
}

impl TimeSeriesDataset {
    /// Validates the invariants and zeroes masked cells. With `mask = None`
    /// the mask is `values != 0`.
    pub fn new(
        name: impl Into<String>,
        node_ids: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        granularity_minutes: u32,
        mut values: Array2<f64>,
        mask: Option<Array2<bool>>,
        adjacency: Option<Array2<f64>>,
    ) -> Result<Self> {
        let (t, n) = values.dim();
        if timestamps.len() != t {
            return Err(Error::Shape(format!(
                "{} timestamps for {t} value rows",
                timestamps.len()
            )));
        }
        if node_ids.len() != n {
            return Err(Error::Shape(format!("{} node ids for {n} columns", node_ids.len())));
        }
        if granularity_minutes == 0 {
            return Err(Error::Config("granularity must be positive".into()));
        }
        let step = Duration::minutes(granularity_minutes as i64);
        for i in 1..t {
            if timestamps[i] - timestamps[i - 1] != step {
                return Err(Error::NonUniformTimestamps { index: i });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite reading".into()));
        }
        let mask = match mask {
            Some(m) => {
                if m.dim() != (t, n) {
                    return Err(Error::Shape(format!("mask is {:?}, values are {:?}", m.dim(), (t, n))));
                }
                ndarray::Zip::from(&mut values).and(&m).for_each(|v, &observed| {
                    if !observed {
                        *v = 0.0;
                    }
                });
                m
            }
            None => values.mapv(|v| v != 0.0),
        };
        if let Some(a) = &adjacency {
            if a.dim() != (n, n) {
                return Err(Error::Shape(format!("adjacency is {:?}, expected {:?}", a.dim(), (n, n))));
            }
            if a.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Shape("adjacency entries must be finite and nonnegative".into()));
            }
        }
        Ok(TimeSeriesDataset {
            name: name.into(),
            node_ids,
            timestamps,
            granularity_minutes,
            values,
            mask,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    /// Contiguous row range `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> TimeSeriesDataset {
        TimeSeriesDataset {
            name: self.name.clone(),
            node_ids: self.node_ids.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            granularity_minutes: self.granularity_minutes,
            values: self.values.slice(s![start..end, ..]).to_owned(),
            mask: self.mask.slice(s![start..end, ..]).to_owned(),
            adjacency: self.adjacency.clone(),
        }
    }

    /// Writes the directory layout read by [`load_dataset`].
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_err = |p: &Path, e: csv::Error| Error::parse(p.display().to_string(), e);

        let path = dir.join(VALUES_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(&self.node_ids).map_err(|e| csv_err(&path, e))?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| format!("{v}")))
                .map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(TIMESTAMPS_FILE);
        let text: String = self
            .timestamps
            .iter()
            .map(|t| format!("{}\n", t.format("%Y-%m-%dT%H:%M:%S")))
            .collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        if let Some(a) = &self.adjacency {
            let path = dir.join(ADJACENCY_FILE);
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(&path)
                .map_err(|e| csv_err(&path, e))?;
            for row in a.rows() {
                w.write_record(row.iter().map(|v| format!("{v}")))
                    .map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }

        let path = dir.join(META_FILE);
        let meta = format!(
            "name={}\ngranularity_minutes={}\n",
            self.name, self.granularity_minutes
        );
        fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn read_matrix(path: &Path, has_header: bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e))?;
    let header = if has_header {
        reader
            .headers()
            .map_err(|e| Error::parse(path.display().to_string(), e))?
            .iter()
            .map(str::to_owned)
            .collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path.display().to_string(), e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn rows_to_array(rows: Vec<Vec<f64>>, cols: usize, what: &str) -> Result<Array2<f64>> {
    let r = rows.len();
    let mut flat = Vec::with_capacity(r * cols);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Shape(format!("{what} row {i} has {} columns, expected {cols}", row.len())));
        }
        flat.extend(row);
    }
    Ok(Array2::from_shape_vec((r, cols), flat).unwrap())
}

fn parse_meta(text: &str) -> Result<(String, u32)> {
    let mut name = None;
    let mut gran = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("meta:{}", i + 1), "expected key=value"))?;
        match k.trim() {
            "name" => name = Some(v.trim().to_owned()),
            "granularity_minutes" => {
                gran = Some(
                    v.trim()
                        .parse::<u32>()
                        .map_err(|e| Error::parse(format!("meta:{}", i + 1), e))?,
                )
            }
            _ => {}
        }
    }
    let gran = gran.ok_or_else(|| Error::parse("meta", "missing granularity_minutes"))?;
    Ok((name.unwrap_or_else(|| "dataset".into()), gran))
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<TimeSeriesDataset> {
    let need = |f: &str| {
        let p = dir.join(f);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingFile(p))
        }
    };
    let values_path = need(VALUES_FILE)?;
    let ts_path = need(TIMESTAMPS_FILE)?;
    let meta_path = need(META_FILE)?;

    let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let (name, granularity) = parse_meta(&meta)?;

    let (node_ids, rows) = read_matrix(&values_path, true)?;
    let values = rows_to_array(rows, node_ids.len(), "values")?;

    let ts_text = fs::read_to_string(&ts_path).map_err(|e| Error::io(&ts_path, e))?;
    let mut lines: Vec<&str> = ts_text.lines().filter(|l| !l.trim().is_empty()).collect();
    if let Some(first) = lines.first() {
        // Tolerate a single header line.
        if parse_timestamp(first.split(',').next().unwrap_or("")).is_none() {
            lines.remove(0);
        }
    }
    let timestamps = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let field = l.split(',').next().unwrap_or("");
            parse_timestamp(field).ok_or_else(|| {
                Error::parse(format!("{}:{}", ts_path.display(), i + 1), format!("bad timestamp '{field}'"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mask_path = dir.join(MASK_FILE);
    let mask = if mask_path.is_file() {
        let (_, rows) = read_matrix(&mask_path, true)?;
        Some(rows_to_array(rows, node_ids.len(), "mask")?.mapv(|v| v != 0.0))
    } else {
        None
    };

    let adj_path = dir.join(ADJACENCY_FILE);
    let adjacency = if adj_path.is_file() {
        let (_, rows) = read_matrix(&adj_path, false)?;
        let cols = rows.first().map_or(0, Vec::len);
        Some(rows_to_array(rows, cols, "adjacency")?)
    } else {
        None
    };

    TimeSeriesDataset::new(name, node_ids, timestamps, granularity, values, mask, adjacency)
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        if !(train > 0.0 && val > 0.0 && test > 0.0) {
            return Err(Error::InvalidSplit("fractions must be positive".into()));
        }
        if ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {}", train + val + test)));
        }
        Ok(SplitSpec { train, val, test })
    }

    /// The 70/10/20 road-traffic protocol.
    pub fn road() -> Self {
        SplitSpec { train: 0.7, val: 0.1, test: 0.2 }
    }

    /// The 80/10/10 cellular-traffic protocol.
    pub fn cellular() -> Self {
        SplitSpec { train: 0.8, val: 0.1, test: 0.1 }
    }

    /// Row boundaries `(train_end, val_end)` for a series of length `t`.
    pub fn boundaries(&self, t: usize) -> (usize, usize) {
        // The epsilon absorbs representation error such as 0.7 + 0.1 < 0.8.
        let cut = |f: f64| ((f * t as f64) + 1e-9).floor() as usize;
        let a = cut(self.train).min(t);
        let b = cut(self.train + self.val).clamp(a, t);
        (a, b)
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: TimeSeriesDataset,
    pub val: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
}

/// Contiguous ascending-time partition. Every part must hold at least
/// `min_len` rows (one full history + horizon window).
pub fn split(dataset: &TimeSeriesDataset, spec: &SplitSpec, min_len: usize) -> Result<Splits> {
    let t = dataset.len();
    let (a, b) = spec.boundaries(t);
    for (name, len) in [("train", a), ("validation", b - a), ("test", t - b)] {
        if len < min_len {
            return Err(Error::InvalidSplit(format!(
                "{name} split has {len} rows, need at least {min_len}"
            )));
        }
    }
    Ok(Splits {
        train: dataset.slice_rows(0, a),
        val: dataset.slice_rows(a, b),
        test: dataset.slice_rows(b, t),
    })
}

/// Global z-score statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Mean and population standard deviation over observed cells.
    pub fn fit(values: ArrayView2<f64>, mask: ArrayView2<bool>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = 0.0;
        ndarray::Zip::from(values).and(mask).for_each(|&v, &m| {
            if m {
                sum += v;
                n += 1;
            }
        });
        if n == 0 {
            return Err(Error::Degenerate("no observed cells to fit normalization".into()));
        }
        let mean = sum / n as f64;
        let mut sq = 0.0;
        ndarray::Zip::from(values).and(mask).for_each(|&v, &m| {
            if m {
                sq += (v - mean) * (v - mean);
            }
        });
        let std = (sq / n as f64).sqrt();
        if !(std > 0.0) {
            return Err(Error::Degenerate("zero variance across observed cells".into()));
        }
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Z-scores observed cells; masked cells stay at 0. Statistics are fit on
/// `dataset` when not supplied.
pub fn normalize(
    dataset: &TimeSeriesDataset,
    stats: Option<NormStats>,
) -> Result<(TimeSeriesDataset, NormStats)> {
    let stats = match stats {
        Some(s) => s,
        None => NormStats::fit(dataset.values.view(), dataset.mask.view())?,
    };
    let mut out = dataset.clone();
    ndarray::Zip::from(&mut out.values)
        .and(&dataset.mask)
        .for_each(|v, &m| {
            if m {
                *v = stats.normalize(*v);
            }
        });
    Ok((out, stats))
}

/// Inverse of [`normalize`] on observed cells.
pub fn denormalize(dataset: &TimeSeriesDataset, stats: &NormStats) -> TimeSeriesDataset {
    let mut out = dataset.clone();
    ndarray::Zip::from(&mut out.values)
        .and(&dataset.mask)
        .for_each(|v, &m| {
            if m {
                *v = stats.denormalize(*v);
            }
        });
    out
}

/// Coordinate channels appended after the value channel of each history step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputChannels {
    ValueOnly,
    #[default]
    TimeOfDay,
    TimeOfDayDayOfWeek,
}

impl InputChannels {
    pub fn count(self) -> usize {
        match self {
            InputChannels::ValueOnly => 1,
            InputChannels::TimeOfDay => 2,
            InputChannels::TimeOfDayDayOfWeek => 3,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(InputChannels::ValueOnly),
            "tod" => Ok(InputChannels::TimeOfDay),
            "tod_dow" => Ok(InputChannels::TimeOfDayDayOfWeek),
            other => Err(Error::Unknown { what: "input channel set", name: other.into() }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputChannels::ValueOnly => "value",
            InputChannels::TimeOfDay => "tod",
            InputChannels::TimeOfDayDayOfWeek => "tod_dow",
        }
    }

    fn fill(self, out: &mut [f64], value: f64, c: &AuxCoordinates) {
        out[0] = value;
        if self.count() > 1 {
            out[1] = c.time_of_day;
        }
        if self.count() > 2 {
            out[2] = c.day_of_week;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `T_h × N × C`, value channel first.
    pub history: Array3<f64>,
    /// `T_f × N`.
    pub target: Array2<f64>,
    pub target_mask: Array2<bool>,
    pub history_coords: Vec<AuxCoordinates>,
    /// Row of the first target step within the dataset.
    pub target_start_index: usize,
}

/// Number of windows of `history + horizon` rows in a series of length `len`.
pub fn window_count(len: usize, history: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(history + horizon)
}

/// Sliding windows over one split, in ascending start order.
pub fn make_windows(
    dataset: &TimeSeriesDataset,
    history: usize,
    horizon: usize,
    channels: InputChannels,
) -> Result<impl Iterator<Item = WindowSample> + '_> {
    if dataset.len() < history + horizon {
        return Err(Error::WindowTooShort { needed: history + horizon, available: dataset.len() });
    }
    let coords: Vec<AuxCoordinates> = dataset.timestamps.iter().map(extract_coords).collect();
    let n = dataset.num_nodes();
    let c = channels.count();
    Ok((0..window_count(dataset.len(), history, horizon)).map(move |s| {
        let mut hist = Array3::zeros((history, n, c));
        for t in 0..history {
            for node in 0..n {
                let v = dataset.values[[s + t, node]];
                channels.fill(
                    hist.slice_mut(s![t, node, ..]).as_slice_mut().unwrap(),
                    v,
                    &coords[s + t],
                );
            }
        }
        let ts = s + history;
        WindowSample {
            history: hist,
            target: dataset.values.slice(s![ts..ts + horizon, ..]).to_owned(),
            target_mask: dataset.mask.slice(s![ts..ts + horizon, ..]).to_owned(),
            history_coords: coords[s..s + history].to_vec(),
            target_start_index: ts,
        }
    }))
}

/// Parameters of [`synthesize_seasonal`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub days: usize,
    pub granularity_minutes: u32,
    /// Noise standard deviation relative to the unit daily amplitude.
    pub noise_std: f64,
    pub seed: u64,
}

/// Amplitude factor of the daily cycle on Saturdays and Sundays.
pub const WEEKEND_AMPLITUDE: f64 = 0.6;

/// Seasonal multivariate series starting Monday 2024-01-01 00:00.
///
/// Node `n` reads `level_n + gain_n · (w(t) · sin(2π·tod(t) + phase_n) + ε)`
/// with `w = 1` on weekdays and [`WEEKEND_AMPLITUDE`] on weekends, and
/// `ε ~ N(0, noise_std²)`. Node constants are drawn from the seed.
pub fn synthesize_seasonal(spec: &SyntheticSpec) -> Result<TimeSeriesDataset> {
    if spec.days < 14 {
        return Err(Error::Config(format!("need at least 14 days, got {}", spec.days)));
    }
    if spec.nodes == 0 || spec.granularity_minutes == 0 || 1440 % spec.granularity_minutes != 0 {
        return Err(Error::Config("granularity must divide a day and nodes must be positive".into()));
    }
    if !(spec.noise_std >= 0.0) {
        return Err(Error::Config("noise_std must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let level = Uniform::new(3.0, 5.0).unwrap();
    let gain = Uniform::new(0.5, 1.5).unwrap();
    let phase = Uniform::new(0.0, std::f64::consts::TAU).unwrap();
    let nodes: Vec<(f64, f64, f64)> = (0..spec.nodes)
        .map(|_| (level.sample(&mut rng), gain.sample(&mut rng), phase.sample(&mut rng)))
        .collect();

    let per_day = (1440 / spec.granularity_minutes) as usize;
    let t = per_day * spec.days;
    let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let step = Duration::minutes(spec.granularity_minutes as i64);
    let timestamps: Vec<NaiveDateTime> = (0..t).map(|i| start + step * i as i32).collect();

    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let mut values = Array2::zeros((t, spec.nodes));
    for (i, ts) in timestamps.iter().enumerate() {
        let c = extract_coords(ts);
        let w = if c.weekend { WEEKEND_AMPLITUDE } else { 1.0 };
        for (n, &(lvl, g, ph)) in nodes.iter().enumerate() {
            let eps = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let daily = (std::f64::consts::TAU * c.time_of_day + ph).sin();
            values[[i, n]] = lvl + g * (w * daily + eps);
        }
    }
    // A reading of exactly 0 would be taken as missing.
    let mask = Array2::from_elem((t, spec.nodes), true);
    TimeSeriesDataset::new(
        format!("synthetic-{}n-{}d", spec.nodes, spec.days),
        (0..spec.nodes).map(|i| i.to_string()).collect(),
        timestamps,
        spec.granularity_minutes,
        values,
        Some(mask),
        None,
    )
}
