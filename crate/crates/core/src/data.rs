//! Raw load CSV ingestion: unpivot wide daily rows, repair gaps, derive
//! channels, split chronologically, and cut fixed-size window pairs.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const STEP_MINUTES: i64 = 30;
pub const STEPS_PER_DAY: usize = 48;
pub const DEFAULT_INPUT_LEN: usize = 512;
pub const DEFAULT_HORIZON: usize = 96;
pub const DEFAULT_STRIDE: usize = 96;

/// Load channel. Order (Sp, Hp, Ap) matches the feature-task order x(1..3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Sp,
    Hp,
    Ap,
}

pub const CHANNELS: [Channel; 3] = [Channel::Sp, Channel::Hp, Channel::Ap];

/// Source category code -> channel. Default: GG (gross generation) -> sp,
/// CL (controlled load) -> hp, GC (general consumption) -> ap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelMap(pub BTreeMap<String, Channel>);

impl Default for ChannelMap {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("GG".to_string(), Channel::Sp);
        m.insert("CL".to_string(), Channel::Hp);
        m.insert("GC".to_string(), Channel::Ap);
        ChannelMap(m)
    }
}

impl ChannelMap {
    fn covers_all(&self) -> bool {
        CHANNELS.iter().all(|c| self.0.values().any(|v| v == c))
    }
}

/// Per-household half-hourly load sequences. Missing values are NaN until
/// [`interpolate_missing`] repairs them; timestamps are implicit from `start`
/// at a constant 30-minute spacing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HouseholdSeries {
    pub household_id: u64,
    pub start: NaiveDateTime,
    pub sp: Vec<f64>,
    pub hp: Vec<f64>,
    pub ap: Vec<f64>,
}

impl HouseholdSeries {
    pub fn len(&self) -> usize {
        self.sp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sp.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + TimeDelta::minutes(STEP_MINUTES * i as i64)
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        match c {
            Channel::Sp => &self.sp,
            Channel::Hp => &self.hp,
            Channel::Ap => &self.ap,
        }
    }

    pub fn has_missing(&self) -> bool {
        self.sp.iter().chain(&self.hp).chain(&self.ap).any(|v| v.is_nan())
    }

    /// Contiguous sub-series covering steps [a, b).
    pub fn slice(&self, a: usize, b: usize) -> HouseholdSeries {
        HouseholdSeries {
            household_id: self.household_id,
            start: self.timestamp(a),
            sp: self.sp[a..b].to_vec(),
            hp: self.hp[a..b].to_vec(),
            ap: self.ap[a..b].to_vec(),
        }
    }
}

/// One training/eval sample: (input_len, 3) input and (horizon, 3) target,
/// channel order (sp, hp, ap).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPair {
    pub household_id: u64,
    /// Epoch seconds of the first input step.
    pub t0: i64,
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let s = self.train + self.val + self.test;
        if (s - 1.0).abs() > 1e-9 || self.train <= 0.0 || self.val <= 0.0 || self.test <= 0.0 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got ({}, {}, {})",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParseWarnings {
    pub unknown_category_rows: usize,
    /// Households dropped because a mapped category had no rows.
    pub excluded_households: Vec<(u64, String)>,
}

#[derive(Clone, Debug)]
pub struct ParsedDataset {
    pub series: Vec<HouseholdSeries>,
    pub warnings: ParseWarnings,
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%d/%m/%Y")
        .or_else(|_| NaiveDate::parse_from_str(s, "%Y-%m-%d"))
        .ok()
}

/// Parse a wide-format load CSV: header row, then one row per
/// (customer id, category code, date) carrying 48 half-hour readings.
/// Blank readings become NaN and are repaired later by interpolation.
pub fn parse_load_csv(path: &Path, channel_map: &ChannelMap) -> Result<ParsedDataset> {
    if !channel_map.covers_all() {
        return Err(Error::Config("channel_map must cover sp, hp and ap".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;

    // (household, channel) -> date -> readings
    let mut by_key: BTreeMap<(u64, Channel), BTreeMap<NaiveDate, Vec<f64>>> = BTreeMap::new();
    let mut warnings = ParseWarnings::default();

    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2; // header is line 1
        let rec = rec.map_err(|e| Error::MalformedRecord { line, msg: e.to_string() })?;
        if rec.len() < 3 + STEPS_PER_DAY {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("expected {} fields, got {}", 3 + STEPS_PER_DAY, rec.len()),
            });
        }
        let id: u64 = rec[0].trim().parse().map_err(|_| Error::MalformedRecord {
            line,
            msg: format!("bad customer id {:?}", &rec[0]),
        })?;
        let code = rec[1].trim().to_string();
        let channel = match channel_map.0.get(&code) {
            Some(c) => *c,
            None => {
                warnings.unknown_category_rows += 1;
                continue;
            }
        };
        let date = parse_date(rec[2].trim()).ok_or_else(|| Error::MalformedRecord {
            line,
            msg: format!("bad date {:?}", &rec[2]),
        })?;
        let mut vals = Vec::with_capacity(STEPS_PER_DAY);
        for j in 0..STEPS_PER_DAY {
            let cell = rec[3 + j].trim();
            if cell.is_empty() {
                vals.push(f64::NAN);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::MalformedRecord {
                    line,
                    msg: format!("bad reading {:?} in column {}", cell, 4 + j),
                })?;
                vals.push(v);
            }
        }
        by_key.entry((id, channel)).or_default().insert(date, vals);
    }

    let mut ids: Vec<u64> = by_key.keys().map(|(id, _)| *id).collect();
    ids.dedup();

    let mut series = Vec::new();
    'household: for id in ids {
        for c in CHANNELS {
            if !by_key.contains_key(&(id, c)) {
                warnings.excluded_households.push((id, format!("{c:?}")));
                continue 'household;
            }
        }
        let first = by_key[&(id, Channel::Sp)]
            .keys()
            .chain(by_key[&(id, Channel::Hp)].keys())
            .chain(by_key[&(id, Channel::Ap)].keys())
            .min()
            .copied()
            .unwrap();
        let last = by_key[&(id, Channel::Sp)]
            .keys()
            .chain(by_key[&(id, Channel::Hp)].keys())
            .chain(by_key[&(id, Channel::Ap)].keys())
            .max()
            .copied()
            .unwrap();
        let days = (last - first).num_days() as usize + 1;
        let n = days * STEPS_PER_DAY;
        let mut channels: BTreeMap<Channel, Vec<f64>> = BTreeMap::new();
        for c in CHANNELS {
            let mut v = vec![f64::NAN; n];
            for (date, vals) in &by_key[&(id, c)] {
                let off = (*date - first).num_days() as usize * STEPS_PER_DAY;
                v[off..off + STEPS_PER_DAY].copy_from_slice(vals);
            }
            channels.insert(c, v);
        }
        series.push(HouseholdSeries {
            household_id: id,
            start: first.and_hms_opt(0, 0, 0).unwrap(),
            sp: channels.remove(&Channel::Sp).unwrap(),
            hp: channels.remove(&Channel::Hp).unwrap(),
            ap: channels.remove(&Channel::Ap).unwrap(),
        });
    }
    Ok(ParsedDataset { series, warnings })
}

/// Linear interpolation over a single channel; leading/trailing gaps are
/// filled by replicating the nearest observed value.
pub fn interpolate_channel(values: &[f64]) -> Option<Vec<f64>> {
    let observed: Vec<usize> =
        values.iter().enumerate().filter(|(_, v)| !v.is_nan()).map(|(i, _)| i).collect();
    if observed.len() < 2 {
        return None;
    }
    let mut out = values.to_vec();
    for i in 0..*observed.first().unwrap() {
        out[i] = values[observed[0]];
    }
    for i in observed.last().unwrap() + 1..values.len() {
        out[i] = values[*observed.last().unwrap()];
    }
    for w in observed.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b > a + 1 {
            let (ya, yb) = (values[a], values[b]);
            for i in a + 1..b {
                let t = (i - a) as f64 / (b - a) as f64;
                out[i] = ya + t * (yb - ya);
            }
        }
    }
    Some(out)
}

pub fn interpolate_missing(series: &HouseholdSeries) -> Result<HouseholdSeries> {
    let sp = interpolate_channel(&series.sp)
        .ok_or(Error::UnrecoverableChannel { channel: "sp" })?;
    let hp = interpolate_channel(&series.hp)
        .ok_or(Error::UnrecoverableChannel { channel: "hp" })?;
    let ap = interpolate_channel(&series.ap)
        .ok_or(Error::UnrecoverableChannel { channel: "ap" })?;
    Ok(HouseholdSeries { household_id: series.household_id, start: series.start, sp, hp, ap })
}

/// Elementwise hp + ap - sp.
pub fn net_energy(hp: &[f64], ap: &[f64], sp: &[f64]) -> Result<Vec<f64>> {
    if hp.len() != ap.len() || hp.len() != sp.len() {
        return Err(Error::Shape {
            expected: format!("three channels of length {}", hp.len()),
            actual: format!("{}/{}/{}", hp.len(), ap.len(), sp.len()),
        });
    }
    Ok(hp.iter().zip(ap).zip(sp).map(|((h, a), s)| h + a - s).collect())
}

/// Chronological, contiguous, non-overlapping split. Integer remainder goes
/// to the test partition.
pub fn split_series(
    series: &HouseholdSeries,
    spec: &SplitSpec,
    input_len: usize,
    horizon: usize,
) -> Result<(HouseholdSeries, HouseholdSeries, HouseholdSeries)> {
    spec.validate()?;
    let t = series.len();
    let min_ratio = spec.train.min(spec.val).min(spec.test);
    let required = ((input_len + horizon) as f64 / min_ratio).ceil() as usize;
    if t < required {
        return Err(Error::InsufficientData { required, actual: t });
    }
    let n_train = (spec.train * t as f64).floor() as usize;
    let n_val = (spec.val * t as f64).floor() as usize;
    Ok((
        series.slice(0, n_train),
        series.slice(n_train, n_train + n_val),
        series.slice(n_train + n_val, t),
    ))
}

/// Sliding (input, target) windows at a fixed stride. The target block
/// immediately follows the input block.
pub fn make_windows(
    series: &HouseholdSeries,
    input_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    let t = series.len();
    let total = input_len + horizon;
    if t < total {
        return Err(Error::InsufficientData { required: total, actual: t });
    }
    assert!(stride >= 1, "stride must be positive");
    let count = (t - total) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let s0 = w * stride;
        let mut input = Tensor::zeros(input_len, 3);
        let mut target = Tensor::zeros(horizon, 3);
        for (c, ch) in CHANNELS.iter().enumerate() {
            let vals = series.channel(*ch);
            for i in 0..input_len {
                input.set(i, c, vals[s0 + i]);
            }
            for i in 0..horizon {
                target.set(i, c, vals[s0 + input_len + i]);
            }
        }
        out.push(WindowPair {
            household_id: series.household_id,
            t0: series.timestamp(s0).and_utc().timestamp(),
            input,
            target,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn day_row(id: u64, code: &str, date: &str, base: f64) -> String {
        let vals: Vec<String> = (0..48).map(|i| format!("{}", base + i as f64 * 0.1)).collect();
        format!("{id},{code},{date},{}", vals.join(","))
    }

    const HEADER: &str = "customer,category,date,readings";

    #[test]
    fn minimal_well_formed_file() {
        let mut content = String::from(HEADER);
        content.push('\n');
        content.push_str(&day_row(1, "GG", "1/07/2010", 0.0));
        content.push('\n');
        content.push_str(&day_row(1, "CL", "1/07/2010", 1.0));
        content.push('\n');
        content.push_str(&day_row(1, "GC", "1/07/2010", 2.0));
        content.push('\n');
        let f = write_csv(&content);
        let parsed = parse_load_csv(f.path(), &ChannelMap::default()).unwrap();
        assert_eq!(parsed.series.len(), 1);
        assert_eq!(parsed.series[0].sp.len(), 48);
        assert!((parsed.series[0].sp[0] - 0.0).abs() < 1e-12);
        assert!((parsed.series[0].hp[1] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn two_household_fixture_unpivots() {
        let mut content = String::from(HEADER);
        content.push('\n');
        for id in [7u64, 9u64] {
            for code in ["GG", "CL", "GC"] {
                for date in ["1/07/2010", "2/07/2010"] {
                    content.push_str(&day_row(id, code, date, id as f64));
                    content.push('\n');
                }
            }
        }
        let f = write_csv(&content);
        let parsed = parse_load_csv(f.path(), &ChannelMap::default()).unwrap();
        assert_eq!(parsed.series.len(), 2);
        for s in &parsed.series {
            assert_eq!(s.len(), 96);
            // second day starts at index 48 and repeats the ramp
            assert!((s.sp[48] - s.sp[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_category_excludes_household() {
        let mut content = String::from(HEADER);
        content.push('\n');
        content.push_str(&day_row(3, "GG", "1/07/2010", 0.0));
        content.push('\n');
        content.push_str(&day_row(3, "GC", "1/07/2010", 2.0));
        content.push('\n');
        let f = write_csv(&content);
        let parsed = parse_load_csv(f.path(), &ChannelMap::default()).unwrap();
        assert!(parsed.series.is_empty());
        assert_eq!(parsed.warnings.excluded_households.len(), 1);
        assert_eq!(parsed.warnings.excluded_households[0].0, 3);
    }

    #[test]
    fn unknown_codes_counted() {
        let mut content = String::from(HEADER);
        content.push('\n');
        content.push_str(&day_row(1, "ZZ", "1/07/2010", 0.0));
        content.push('\n');
        let f = write_csv(&content);
        let parsed = parse_load_csv(f.path(), &ChannelMap::default()).unwrap();
        assert_eq!(parsed.warnings.unknown_category_rows, 1);
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut content = String::from(HEADER);
        content.push('\n');
        content.push_str(&day_row(1, "GG", "1/07/2010", 0.0));
        content.push('\n');
        content.push_str("notanumber,GG,1/07/2010,1,2\n");
        let f = write_csv(&content);
        match parse_load_csv(f.path(), &ChannelMap::default()) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed record, got {other:?}"),
        }
    }

    #[test]
    fn interpolation_midpoint() {
        assert_eq!(interpolate_channel(&[1.0, f64::NAN, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn interpolation_leading_replication() {
        assert_eq!(interpolate_channel(&[f64::NAN, 5.0, 5.0]).unwrap(), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn interpolation_linear_segment() {
        let out = interpolate_channel(&[0.0, f64::NAN, f64::NAN, 3.0]).unwrap();
        for (a, b) in out.iter().zip(&[0.0, 1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_idempotent() {
        let v = vec![f64::NAN, 1.0, f64::NAN, f64::NAN, 4.0, f64::NAN];
        let once = interpolate_channel(&v).unwrap();
        let twice = interpolate_channel(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn all_missing_channel_is_unrecoverable() {
        let s = HouseholdSeries {
            household_id: 1,
            start: NaiveDate::from_ymd_opt(2010, 7, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            sp: vec![f64::NAN; 4],
            hp: vec![1.0; 4],
            ap: vec![1.0; 4],
        };
        assert!(matches!(
            interpolate_missing(&s),
            Err(Error::UnrecoverableChannel { channel: "sp" })
        ));
    }

    #[test]
    fn net_energy_arithmetic() {
        assert_eq!(net_energy(&[2.0], &[1.0], &[0.5]).unwrap(), vec![2.5]);
        assert_eq!(net_energy(&[0.0], &[0.0], &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(
            net_energy(&[1.0, 1.0], &[2.0, 0.0], &[3.0, 1.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(matches!(net_energy(&[1.0], &[1.0, 2.0], &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn net_energy_is_linear() {
        let h1 = [1.0, 2.0];
        let a1 = [0.5, 0.1];
        let s1 = [0.2, 0.9];
        let h2 = [3.0, -1.0];
        let a2 = [0.0, 2.0];
        let s2 = [1.0, 1.0];
        let (x, y) = (2.0, -0.5);
        let combined_h: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| x * a + y * b).collect();
        let combined_a: Vec<f64> = a1.iter().zip(&a2).map(|(a, b)| x * a + y * b).collect();
        let combined_s: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| x * a + y * b).collect();
        let lhs = net_energy(&combined_h, &combined_a, &combined_s).unwrap();
        let n1 = net_energy(&h1, &a1, &s1).unwrap();
        let n2 = net_energy(&h2, &a2, &s2).unwrap();
        for i in 0..2 {
            assert!((lhs[i] - (x * n1[i] + y * n2[i])).abs() < 1e-12);
        }
    }

    fn dummy_series(t: usize) -> HouseholdSeries {
        HouseholdSeries {
            household_id: 1,
            start: NaiveDate::from_ymd_opt(2010, 7, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            sp: (0..t).map(|i| i as f64).collect(),
            hp: vec![0.0; t],
            ap: vec![0.0; t],
        }
    }

    #[test]
    fn split_exact_division() {
        let s = dummy_series(1000);
        let (tr, va, te) = split_series(&s, &SplitSpec::default(), 10, 5).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (700, 100, 200));
        // chronological and contiguous
        assert_eq!(tr.sp[699], 699.0);
        assert_eq!(va.sp[0], 700.0);
        assert_eq!(te.sp[0], 800.0);
    }

    #[test]
    fn split_remainder_goes_to_test() {
        let s = dummy_series(1001);
        let (tr, va, te) = split_series(&s, &SplitSpec::default(), 10, 5).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (700, 100, 201));
    }

    #[test]
    fn split_too_short_names_minimum() {
        let s = dummy_series(100);
        match split_series(&s, &SplitSpec::default(), 512, 96) {
            Err(Error::InsufficientData { required, actual }) => {
                assert_eq!(required, 6080);
                assert_eq!(actual, 100);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn window_boundaries() {
        let s = dummy_series(608);
        let w = make_windows(&s, 512, 96, 48).unwrap();
        assert_eq!(w.len(), 1);

        let s = dummy_series(704);
        let w = make_windows(&s, 512, 96, 48).unwrap();
        assert_eq!(w.len(), 3);
        // start offsets 0, 48, 96
        assert_eq!(w[1].input.get(0, 0), 48.0);
        assert_eq!(w[2].input.get(0, 0), 96.0);

        let s = dummy_series(607);
        assert!(matches!(make_windows(&s, 512, 96, 48), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn target_follows_input_with_no_gap() {
        let s = dummy_series(700);
        let w = make_windows(&s, 512, 96, 96).unwrap();
        for pair in &w {
            let last_in = pair.input.get(511, 0);
            let first_tgt = pair.target.get(0, 0);
            assert_eq!(first_tgt, last_in + 1.0);
        }
    }

    #[test]
    fn tiling_windows_cover_source_exactly() {
        let s = dummy_series(608 * 3);
        let w = make_windows(&s, 512, 96, 608).unwrap();
        assert_eq!(w.len(), 3);
        let mut reassembled = Vec::new();
        for pair in &w {
            for i in 0..512 {
                reassembled.push(pair.input.get(i, 0));
            }
            for i in 0..96 {
                reassembled.push(pair.target.get(i, 0));
            }
        }
        let expect: Vec<f64> = (0..608 * 3).map(|i| i as f64).collect();
        assert_eq!(reassembled, expect);
    }

    #[test]
    fn window_count_matches_enumeration() {
        for t in 20..=40usize {
            for stride in 1..=6usize {
                let s = dummy_series(t);
                let (il, hz) = (12, 4);
                if t < il + hz {
                    continue;
                }
                let w = make_windows(&s, il, hz, stride).unwrap();
                let brute = (0..).take_while(|i| i * stride + il + hz <= t).count();
                assert_eq!(w.len(), brute, "t={t} stride={stride}");
            }
        }
    }
}
