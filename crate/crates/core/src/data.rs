//! Masked traffic series: CSV ingestion, standardization, chronological
//! splits, sliding windows, synthetic data and forecast metrics.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, WeaverError};
use crate::model::StepTime;
use crate::Tensor;

/// ε_σ in the standardization denominator.
pub const SCALER_EPS: f64 = 1e-8;

/// `S × N × C` values with a {0,1} observation mask and a fixed cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    pub values: Tensor,
    pub mask: Tensor,
    pub stamps: Vec<NaiveDateTime>,
    pub cadence_minutes: u32,
    pub node_names: Vec<String>,
    pub channel_names: Vec<String>,
}

impl TrafficSeries {
    pub fn new(
        values: Tensor,
        mask: Tensor,
        stamps: Vec<NaiveDateTime>,
        cadence_minutes: u32,
        node_names: Vec<String>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || mask.shape() != s {
            return Err(WeaverError::shape("traffic series", s, mask.shape()));
        }
        if stamps.len() != s[0] || node_names.len() != s[1] || channel_names.len() != s[2] {
            return Err(WeaverError::Data(format!(
                "{} stamps, {} node names and {} channel names for values of shape {s:?}",
                stamps.len(),
                node_names.len(),
                channel_names.len()
            )));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(WeaverError::Data("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            values,
            mask,
            stamps,
            cadence_minutes,
            node_names,
            channel_names,
        })
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn step_time(&self, i: usize) -> StepTime {
        step_time(&self.stamps[i])
    }

    pub fn step_times(&self, range: Range<usize>) -> Vec<StepTime> {
        self.stamps[range].iter().map(step_time).collect()
    }

    /// Contiguous sub-series over `range` of steps.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.steps() {
            return Err(WeaverError::Data(format!(
                "slice {range:?} of {} steps",
                self.steps()
            )));
        }
        Ok(Self {
            values: self.values.slice_axis(0, range.start, range.len())?,
            mask: self.mask.slice_axis(0, range.start, range.len())?,
            stamps: self.stamps[range].to_vec(),
            cadence_minutes: self.cadence_minutes,
            node_names: self.node_names.clone(),
            channel_names: self.channel_names.clone(),
        })
    }

    pub fn observed_fraction(&self) -> f64 {
        self.mask.sum() / self.mask.numel() as f64
    }
}

fn step_time(t: &NaiveDateTime) -> StepTime {
    StepTime {
        minute_of_day: t.hour() * 60 + t.minute(),
        day_of_week: t.weekday().number_from_monday(),
    }
}

fn parse_stamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.naive_local())
        .map_err(|_| WeaverError::Data(format!("cannot parse timestamp `{s}`")))
}

/// Reads a `timestamp,node_0,…` CSV. Empty cells are masked. An optional
/// mask CSV of the same layout holding 0/1 further masks cells.
pub fn load_csv(path: &Path, mask_path: Option<&Path>) -> Result<TrafficSeries> {
    let open = |p: &Path| {
        std::fs::File::open(p).map_err(|e| WeaverError::Io(format!("{}: {e}", p.display())))
    };
    let mask = mask_path.map(open).transpose()?;
    read_csv(open(path)?, mask)
}

pub fn read_csv<R: Read>(values: R, mask: Option<R>) -> Result<TrafficSeries> {
    let table = read_table(values)?;
    let n = table.nodes.len();
    let s = table.rows.len();
    if s == 0 || n == 0 {
        return Err(WeaverError::Data(
            "CSV has no data rows or no node columns".into(),
        ));
    }
    let mut cadence = None;
    for (i, pair) in table.stamps.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if step <= Duration::zero() {
            return Err(WeaverError::Data(format!(
                "timestamps not increasing at row {}",
                i + 3
            )));
        }
        match cadence {
            None => cadence = Some(step),
            Some(c) if c != step => {
                return Err(WeaverError::Data(format!(
                    "cadence violation at row {}: {} min after {} min",
                    i + 3,
                    step.num_minutes(),
                    c.num_minutes()
                )))
            }
            Some(_) => {}
        }
    }
    let cadence = cadence.unwrap_or(Duration::minutes(5));
    if cadence.num_seconds() % 60 != 0 {
        return Err(WeaverError::Data(
            "cadence must be a whole number of minutes".into(),
        ));
    }
    let cadence = cadence.num_minutes();
    let mut vals = Vec::with_capacity(s * n);
    let mut obs = Vec::with_capacity(s * n);
    for row in &table.rows {
        for cell in row {
            vals.push(cell.unwrap_or(0.0));
            obs.push(if cell.is_some() { 1.0 } else { 0.0 });
        }
    }
    if let Some(mask) = mask {
        let m = read_table(mask)?;
        if m.stamps != table.stamps || m.nodes.len() != n {
            return Err(WeaverError::Data(
                "mask CSV does not match the value CSV layout".into(),
            ));
        }
        for (slot, cell) in obs.iter_mut().zip(m.rows.iter().flatten()) {
            match cell {
                Some(v) if *v == 0.0 => *slot = 0.0,
                Some(v) if *v == 1.0 => {}
                _ => return Err(WeaverError::Data("mask CSV entries must be 0 or 1".into())),
            }
        }
        for (v, &o) in vals.iter_mut().zip(&obs) {
            if o == 0.0 {
                *v = 0.0;
            }
        }
    }
    TrafficSeries::new(
        Tensor::from_vec(&[s, n, 1], vals)?,
        Tensor::from_vec(&[s, n, 1], obs)?,
        table.stamps,
        cadence as u32,
        table.nodes,
        vec!["value".into()],
    )
}

struct Table {
    nodes: Vec<String>,
    stamps: Vec<NaiveDateTime>,
    rows: Vec<Vec<Option<f64>>>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let csv_err = |e: csv::Error| WeaverError::Data(format!("csv: {e}"));
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.get(0).map(str::trim) != Some("timestamp") {
        return Err(WeaverError::Data(
            "first CSV column must be `timestamp`".into(),
        ));
    }
    let nodes: Vec<String> = header
        .iter()
        .skip(1)
        .map(|h| h.trim().to_string())
        .collect();
    let mut stamps = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != nodes.len() + 1 {
            return Err(WeaverError::Data(format!(
                "row {} has {} fields, expected {}",
                i + 2,
                rec.len(),
                nodes.len() + 1
            )));
        }
        stamps.push(parse_stamp(&rec[0])?);
        let row = rec
            .iter()
            .skip(1)
            .map(|cell| {
                let cell = cell.trim();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Some)
                        .ok_or_else(|| {
                            WeaverError::Data(format!("row {}: bad number `{cell}`", i + 2))
                        })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table {
        nodes,
        stamps,
        rows,
    })
}

/// Writes channel 0 in the CSV layout read by [`read_csv`], leaving masked
/// cells empty.
pub fn write_csv<W: Write>(series: &TrafficSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| WeaverError::Io(e.to_string());
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.node_names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (t, stamp) in series.stamps.iter().enumerate() {
        let mut rec = vec![stamp.format("%Y-%m-%dT%H:%M:%S").to_string()];
        for n in 0..series.nodes() {
            rec.push(if series.mask.get(&[t, n, 0]) == 1.0 {
                format!("{}", series.values.get(&[t, n, 0]))
            } else {
                String::new()
            });
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-channel masked mean and biased standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub counts: Vec<usize>,
    pub eps: f64,
}

pub fn fit_scaler(train: &TrafficSeries) -> Result<ScalerStats> {
    let c = train.channels();
    let mut sum = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (i, (&v, &m)) in train
        .values
        .data()
        .iter()
        .zip(train.mask.data())
        .enumerate()
    {
        if m == 1.0 {
            sum[i % c] += v;
            counts[i % c] += 1;
        }
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(WeaverError::Data(format!(
            "channel {k} has no observed entries"
        )));
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect();
    let mut sq = vec![0.0; c];
    for (i, (&v, &m)) in train
        .values
        .data()
        .iter()
        .zip(train.mask.data())
        .enumerate()
    {
        if m == 1.0 {
            sq[i % c] += (v - mean[i % c]).powi(2);
        }
    }
    let std = sq
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (s / n as f64).sqrt())
        .collect();
    Ok(ScalerStats {
        mean,
        std,
        counts,
        eps: SCALER_EPS,
    })
}

impl ScalerStats {
    fn channel_check(&self, x: &Tensor) -> Result<usize> {
        let c = *x.shape().last().unwrap_or(&0);
        if c != self.mean.len() {
            return Err(WeaverError::shape(
                "scaler channels",
                &[self.mean.len()],
                &[c],
            ));
        }
        Ok(c)
    }

    /// Flat metadata entries for a checkpoint header.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut m = BTreeMap::new();
        m.insert("scaler.mean".into(), join(&self.mean));
        m.insert("scaler.std".into(), join(&self.std));
        m.insert(
            "scaler.counts".into(),
            self.counts
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        m
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| WeaverError::Checkpoint(format!("missing `{k}`")))
        };
        let floats = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|v| {
                    v.parse()
                        .map_err(|_| WeaverError::Checkpoint(format!("bad `{k}`")))
                })
                .collect()
        };
        let counts = get("scaler.counts")?
            .split(',')
            .map(|v| {
                v.parse()
                    .map_err(|_| WeaverError::Checkpoint("bad `scaler.counts`".into()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            mean: floats("scaler.mean")?,
            std: floats("scaler.std")?,
            counts,
            eps: SCALER_EPS,
        })
    }
}

/// `M (X − μ)/(σ + ε_σ)` per channel (last mode).
pub fn standardize(x: &Tensor, mask: &Tensor, stats: &ScalerStats) -> Result<Tensor> {
    let c = stats.channel_check(x)?;
    if mask.shape() != x.shape() {
        return Err(WeaverError::shape(
            "standardize mask",
            x.shape(),
            mask.shape(),
        ));
    }
    let data = x
        .data()
        .iter()
        .zip(mask.data())
        .enumerate()
        .map(|(i, (&v, &m))| m * (v - stats.mean[i % c]) / (stats.std[i % c] + stats.eps))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// `X̄ (σ + ε_σ) + μ` per channel (last mode).
pub fn invert(x: &Tensor, stats: &ScalerStats) -> Result<Tensor> {
    let c = stats.channel_check(x)?;
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (stats.std[i % c] + stats.eps) + stats.mean[i % c])
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn standardize_series(series: &TrafficSeries, stats: &ScalerStats) -> Result<TrafficSeries> {
    let mut out = series.clone();
    out.values = standardize(&series.values, &series.mask, stats)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// A chronological block of steps and the window starts inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub kind: SplitKind,
    pub range: Range<usize>,
    /// absolute start step of every window
    pub starts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicedSeries {
    pub history: usize,
    pub horizon: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

/// Split sizes for `ratios` (relative weights): train and validation take
/// `⌊S·r/Σr⌋` steps and test takes the remainder.
pub fn split_sizes(steps: usize, ratios: [usize; 3]) -> Result<[usize; 3]> {
    let total: usize = ratios.iter().sum();
    if total == 0 {
        return Err(WeaverError::InvalidArgument(
            "split ratios sum to zero".into(),
        ));
    }
    let train = steps * ratios[0] / total;
    let val = steps * ratios[1] / total;
    Ok([train, val, steps - train - val])
}

/// Chronological split, then stride-1 windows of `history` inputs and
/// `horizon` targets lying wholly inside each split. A split of length `L`
/// holds `L − P − Q + 1` windows.
pub fn split_and_slice(
    series: &TrafficSeries,
    history: usize,
    horizon: usize,
    ratios: [usize; 3],
) -> Result<SlicedSeries> {
    if history == 0 || horizon == 0 {
        return Err(WeaverError::InvalidArgument(
            "history and horizon must be positive".into(),
        ));
    }
    let [a, b, _] = split_sizes(series.steps(), ratios)?;
    let ranges = [0..a, a..a + b, a + b..series.steps()];
    let mk = |kind: SplitKind, range: Range<usize>| -> Result<Split> {
        let starts = window_starts(range.clone(), history, horizon)
            .map_err(|e| WeaverError::Data(format!("{kind:?} split: {e}")))?;
        Ok(Split {
            kind,
            range,
            starts,
        })
    };
    let [r0, r1, r2] = ranges;
    Ok(SlicedSeries {
        history,
        horizon,
        train: mk(SplitKind::Train, r0)?,
        val: mk(SplitKind::Val, r1)?,
        test: mk(SplitKind::Test, r2)?,
    })
}

/// Start steps of the stride-1 windows lying wholly inside `range`.
pub fn window_starts(range: Range<usize>, history: usize, horizon: usize) -> Result<Vec<usize>> {
    let need = history + horizon;
    if range.len() < need {
        return Err(WeaverError::Data(format!(
            "{} steps are fewer than P + Q = {need}",
            range.len()
        )));
    }
    Ok((range.start..=range.end - need).collect())
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    /// standardized and zero-filled inputs, `P × N × C`
    pub x: Tensor,
    /// inputs on the original scale
    pub x_raw: Tensor,
    pub x_mask: Tensor,
    /// targets on the original scale, `Q × N × C`
    pub y: Tensor,
    pub y_mask: Tensor,
    pub x_times: Vec<StepTime>,
    pub y_times: Vec<StepTime>,
}

/// Cuts the window starting at `start` from a raw series and its
/// standardized copy.
pub fn window(
    raw: &TrafficSeries,
    standardized: &TrafficSeries,
    start: usize,
    history: usize,
    horizon: usize,
) -> Result<Window> {
    if start + history + horizon > raw.steps() || standardized.values.shape() != raw.values.shape()
    {
        return Err(WeaverError::Data(format!(
            "window at {start} exceeds {} steps",
            raw.steps()
        )));
    }
    let mid = start + history;
    Ok(Window {
        start,
        x: standardized.values.slice_axis(0, start, history)?,
        x_raw: raw.values.slice_axis(0, start, history)?,
        x_mask: raw.mask.slice_axis(0, start, history)?,
        y: raw.values.slice_axis(0, mid, horizon)?,
        y_mask: raw.mask.slice_axis(0, mid, horizon)?,
        x_times: raw.step_times(start..mid),
        y_times: raw.step_times(mid..mid + horizon),
    })
}

/// Generator settings for [`synth_series`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub nodes: usize,
    pub days: usize,
    pub cadence_minutes: u32,
    pub noise_std: f64,
    pub missing_rate: f64,
    /// relative weakening of rush-hour dips on weekends
    pub weekly_amplitude: f64,
    pub seed: u64,
}

impl SynthOptions {
    pub fn new(nodes: usize, days: usize, seed: u64) -> Self {
        Self {
            nodes,
            days,
            cadence_minutes: 5,
            noise_std: 1.0,
            missing_rate: 0.1,
            weekly_amplitude: 0.3,
            seed,
        }
    }

    /// Per-node speed: a baseline minus morning and evening Gaussian dips,
    /// weakened on weekends, plus noise. Starts on a Monday at midnight.
    pub fn generate(&self) -> Result<TrafficSeries> {
        if self.nodes == 0
            || self.days == 0
            || self.cadence_minutes == 0
            || 1440 % self.cadence_minutes != 0
        {
            return Err(WeaverError::InvalidArgument(format!(
                "bad synthetic options {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(WeaverError::InvalidArgument(
                "missing_rate must lie in [0, 1)".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        struct Node {
            base: f64,
            am: f64,
            pm: f64,
            shift: f64,
        }
        let profile: Vec<Node> = (0..self.nodes)
            .map(|_| Node {
                base: rng.gen_range(55.0..70.0),
                am: rng.gen_range(12.0..25.0),
                pm: rng.gen_range(8.0..20.0),
                shift: rng.gen_range(-30.0..30.0),
            })
            .collect();
        let per_day = (1440 / self.cadence_minutes) as usize;
        let steps = per_day * self.days;
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .expect("valid date")
            .and_hms_opt(0, 0, 0)
            .expect("valid time");
        let stamps: Vec<NaiveDateTime> = (0..steps)
            .map(|i| start + Duration::minutes(i as i64 * i64::from(self.cadence_minutes)))
            .collect();
        let bump = |t: f64, centre: f64, width: f64| (-0.5 * ((t - centre) / width).powi(2)).exp();
        let mut values = Vec::with_capacity(steps * self.nodes);
        let mut mask = Vec::with_capacity(steps * self.nodes);
        for stamp in &stamps {
            let st = step_time(stamp);
            let minute = f64::from(st.minute_of_day);
            let weekend = st.day_of_week >= 6;
            let scale = if weekend {
                1.0 - self.weekly_amplitude
            } else {
                1.0
            };
            for node in &profile {
                let dip = node.am * bump(minute, 480.0 + node.shift, 60.0)
                    + node.pm * bump(minute, 1050.0 + node.shift, 75.0);
                let noise = if self.noise_std > 0.0 {
                    self.noise_std * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                let observed = self.missing_rate == 0.0 || rng.gen::<f64>() >= self.missing_rate;
                values.push(if observed {
                    node.base - scale * dip + noise
                } else {
                    0.0
                });
                mask.push(if observed { 1.0 } else { 0.0 });
            }
        }
        TrafficSeries::new(
            Tensor::from_vec(&[steps, self.nodes, 1], values)?,
            Tensor::from_vec(&[steps, self.nodes, 1], mask)?,
            stamps,
            self.cadence_minutes,
            (0..self.nodes).map(|n| format!("node_{n}")).collect(),
            vec!["value".into()],
        )
    }
}

/// Deterministic synthetic series with default noise and missingness.
pub fn synth_series(nodes: usize, days: usize, seed: u64) -> Result<TrafficSeries> {
    SynthOptions::new(nodes, days, seed).generate()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// percent; NaN when every observed target is zero
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// one entry per horizon step; NaN where a step has no observed entries
    pub per_step: Vec<Metrics>,
    pub all: Metrics,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    abs: f64,
    sq: f64,
    n: usize,
    pct: f64,
    n_pct: usize,
}

impl Acc {
    fn push(&mut self, y: f64, yh: f64) {
        let e = (y - yh).abs();
        self.abs += e;
        self.sq += e * e;
        self.n += 1;
        if y != 0.0 {
            self.pct += e / y.abs();
            self.n_pct += 1;
        }
    }

    fn finish(&self) -> Metrics {
        let n = self.n as f64;
        Metrics {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape: if self.n_pct == 0 {
                f64::NAN
            } else {
                100.0 * self.pct / self.n_pct as f64
            },
        }
    }
}

/// MAE, RMSE and MAPE over observed entries of `[…, Q, N, C]` tensors, per
/// horizon step and in aggregate. MAPE skips zero targets.
pub fn metrics(y: &Tensor, y_hat: &Tensor, mask: Option<&Tensor>) -> Result<MetricReport> {
    if y.shape() != y_hat.shape() {
        return Err(WeaverError::shape("metrics", y.shape(), y_hat.shape()));
    }
    if let Some(m) = mask {
        if m.shape() != y.shape() {
            return Err(WeaverError::shape("metrics mask", y.shape(), m.shape()));
        }
    }
    let s = y.shape();
    let (q, inner) = match s.len() {
        0 => return Err(WeaverError::EmptyInput("metrics")),
        1 | 2 => (1, y.numel()),
        r => (s[r - 3], s[r - 2] * s[r - 1]),
    };
    let mut steps = vec![Acc::default(); q];
    let mut all = Acc::default();
    for i in 0..y.numel() {
        if mask.is_some_and(|m| m.data()[i] == 0.0) {
            continue;
        }
        let step = (i / inner) % q;
        steps[step].push(y.data()[i], y_hat.data()[i]);
        all.push(y.data()[i], y_hat.data()[i]);
    }
    if all.n == 0 {
        return Err(WeaverError::EmptyInput("metrics: no observed entries"));
    }
    Ok(MetricReport {
        per_step: steps.iter().map(Acc::finish).collect(),
        all: all.finish(),
    })
}

/// Label of 1-based horizon `step` at `cadence` minutes, e.g. `15min`.
pub fn horizon_label(step: usize, cadence_minutes: u32) -> String {
    format!("{}min", step as u64 * u64::from(cadence_minutes))
}

/// Repeats each node's most recent observed input across the horizon,
/// falling back to the channel mean when none was observed.
pub fn persistence_forecast(
    x_raw: &Tensor,
    x_mask: &Tensor,
    horizon: usize,
    fallback: &[f64],
) -> Result<Tensor> {
    let s = x_raw.shape();
    if s.len() != 3 || x_mask.shape() != s || fallback.len() != s[2] {
        return Err(WeaverError::shape(
            "persistence_forecast",
            s,
            x_mask.shape(),
        ));
    }
    let (p, n, c) = (s[0], s[1], s[2]);
    let mut last = vec![0.0; n * c];
    for (j, slot) in last.iter_mut().enumerate() {
        *slot = (0..p)
            .rev()
            .find(|&t| x_mask.data()[t * n * c + j] == 1.0)
            .map_or(fallback[j % c], |t| x_raw.data()[t * n * c + j]);
    }
    Ok(Tensor::from_fn(&[horizon, n, c], |i| last[i[1] * c + i[2]]))
}
