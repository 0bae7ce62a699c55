//! Series and weight persistence, returns tables, intraday ingestion.
//!
//! MatBin layout (little-endian): `b"SPDS"`, `u32` version, `u32` n, `u64` T, then
//! T records of `i64` days since 1970-01-01 followed by `n·n` `f64` in row-major order.
//!
//! CSVLong: header `date,row,col,value`, one line per upper-triangle entry
//! (`row ≤ col`, 0-based), dates as `YYYY-MM-DD`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use nalgebra::{DMatrix, DVector};

use super::{log_returns, CovSeries, ReturnPanel};
use crate::error::{Error, Result};
use crate::optim::StiefelParam;
use crate::respdnet::{Network, NetworkSpec};
use crate::spd::SpdMatrix;

const MAGIC: &[u8; 4] = b"SPDS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;
const DATE_FMT: &str = "%Y-%m-%d";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesFormat {
    CsvLong,
    MatBin,
}

impl SeriesFormat {
    /// `.csv` maps to CSVLong, anything else to MatBin.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => SeriesFormat::CsvLong,
            _ => SeriesFormat::MatBin,
        }
    }
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
}

fn date_to_days(d: NaiveDate) -> i64 {
    (d - epoch()).num_days()
}

fn days_to_date(days: i64) -> Result<NaiveDate> {
    epoch()
        .checked_add_signed(chrono::Duration::try_days(days).ok_or_else(|| Error::Format(format!("date {days} out of range")))?)
        .ok_or_else(|| Error::Format(format!("date {days} out of range")))
}

/// Writes square `n×n` matrices tagged with integer keys.
pub fn write_matbin_raw(path: &Path, n: usize, records: &[(i64, &DMatrix<f64>)]) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + records.len() * (8 + 8 * n * n));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let n32 = u32::try_from(n).map_err(|_| Error::InvalidParameter(format!("dimension {n} too large")))?;
    buf.extend_from_slice(&n32.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (key, m) in records {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: m.nrows().max(m.ncols()),
            });
        }
        buf.extend_from_slice(&key.to_le_bytes());
        for i in 0..n {
            for j in 0..n {
                buf.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a MatBin file without interpreting keys or validating matrices.
pub fn read_matbin_raw(path: &Path) -> Result<(usize, Vec<(i64, DMatrix<f64>)>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected SPDS".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let t = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let record = 8 + 8 * n * n;
    let expected = (t as u128) * (record as u128) + HEADER_LEN as u128;
    if (bytes.len() as u128) != expected {
        return Err(Error::Format(format!(
            "file holds {} bytes, header announces {expected}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(t as usize);
    for chunk in bytes[HEADER_LEN..].chunks_exact(record) {
        let key = i64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let m = DMatrix::from_row_iterator(
            n,
            n,
            chunk[8..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap())),
        );
        out.push((key, m));
    }
    Ok((n, out))
}

pub fn save_series(path: &Path, series: &CovSeries, format: SeriesFormat) -> Result<()> {
    match format {
        SeriesFormat::MatBin => {
            let records: Vec<(i64, &DMatrix<f64>)> = series
                .dates()
                .iter()
                .zip(series.matrices())
                .map(|(d, m)| (date_to_days(*d), m.matrix()))
                .collect();
            write_matbin_raw(path, series.dim(), &records)
        }
        SeriesFormat::CsvLong => {
            let mut out = String::from("date,row,col,value\n");
            for (d, m) in series.dates().iter().zip(series.matrices()) {
                let date = d.format(DATE_FMT).to_string();
                let a = m.matrix();
                for i in 0..a.nrows() {
                    for j in i..a.ncols() {
                        out.push_str(&format!("{date},{i},{j},{:e}\n", a[(i, j)]));
                    }
                }
            }
            fs::write(path, out)?;
            Ok(())
        }
    }
}

pub fn load_series(path: &Path, format: SeriesFormat) -> Result<CovSeries> {
    match format {
        SeriesFormat::MatBin => {
            let (_, records) = read_matbin_raw(path)?;
            let mut dates = Vec::with_capacity(records.len());
            let mut mats = Vec::with_capacity(records.len());
            for (key, m) in records {
                dates.push(days_to_date(key)?);
                mats.push(SpdMatrix::new(m)?);
            }
            CovSeries::new(dates, mats)
        }
        SeriesFormat::CsvLong => load_csv_long(path),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    let got: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}, found {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: usize, what: &str) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} {raw:?}"),
    })
}

fn parse_date(raw: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw, DATE_FMT).map_err(|_| Error::Parse {
        line,
        msg: format!("invalid date {raw:?}"),
    })
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn load_csv_long(path: &Path) -> Result<CovSeries> {
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, &["date", "row", "col", "value"])?;
    let mut days: Vec<(NaiveDate, Vec<(usize, usize, f64, usize)>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record_line(&rec);
        let date = parse_date(rec.get(0).unwrap_or(""), line)?;
        let i: usize = parse_field(&rec, 1, line, "row")?;
        let j: usize = parse_field(&rec, 2, line, "col")?;
        let v: f64 = parse_field(&rec, 3, line, "value")?;
        if i > j {
            return Err(Error::Parse {
                line,
                msg: format!("row {i} > col {j}; only the upper triangle is stored"),
            });
        }
        match days.last_mut() {
            Some((d, entries)) if *d == date => entries.push((i, j, v, line)),
            Some((d, _)) if *d > date => {
                return Err(Error::Parse {
                    line,
                    msg: format!("date {date} after {d}: dates must increase"),
                })
            }
            _ => {
                if days.iter().any(|(d, _)| *d == date) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("date {date} is not contiguous"),
                    });
                }
                days.push((date, vec![(i, j, v, line)]));
            }
        }
    }
    let n = days
        .iter()
        .flat_map(|(_, e)| e.iter().map(|&(_, j, _, _)| j + 1))
        .max()
        .unwrap_or(0);
    let mut dates = Vec::with_capacity(days.len());
    let mut mats = Vec::with_capacity(days.len());
    for (date, entries) in days {
        let mut m = DMatrix::zeros(n, n);
        let mut seen = vec![false; n * n];
        for (i, j, v, line) in &entries {
            if std::mem::replace(&mut seen[i * n + j], true) {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("duplicate entry ({i},{j}) on {date}"),
                });
            }
            m[(*i, *j)] = *v;
            m[(*j, *i)] = *v;
        }
        if entries.len() != n * (n + 1) / 2 {
            return Err(Error::Format(format!(
                "{date} has {} entries, a {n}×{n} matrix needs {}",
                entries.len(),
                n * (n + 1) / 2
            )));
        }
        dates.push(date);
        mats.push(SpdMatrix::new(m)?);
    }
    CovSeries::new(dates, mats)
}

/// Daily returns, one row per date, one column per ticker.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnsTable {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub values: DMatrix<f64>,
}

impl ReturnsTable {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != tickers.len() {
            return Err(Error::Misaligned(format!(
                "{}×{} values for {} dates and {} tickers",
                values.nrows(),
                values.ncols(),
                dates.len(),
                tickers.len()
            )));
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Misaligned("return dates must be strictly increasing".into()));
        }
        Ok(Self { dates, tickers, values })
    }

    /// Rows matching `dates`, which must all be present.
    pub fn select(&self, dates: &[NaiveDate]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(dates.len(), self.tickers.len());
        for (r, d) in dates.iter().enumerate() {
            let i = self
                .dates
                .binary_search(d)
                .map_err(|_| Error::Misaligned(format!("no returns for {d}")))?;
            out.row_mut(r).copy_from(&self.values.row(i));
        }
        Ok(out)
    }
}

/// Header `date,<ticker>...`.
pub fn save_returns_csv(path: &Path, table: &ReturnsTable) -> Result<()> {
    let mut out = String::from("date");
    for t in &table.tickers {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for (r, d) in table.dates.iter().enumerate() {
        out.push_str(&d.format(DATE_FMT).to_string());
        for c in 0..table.tickers.len() {
            out.push_str(&format!(",{:e}", table.values[(r, c)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_returns_csv(path: &Path) -> Result<ReturnsTable> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    if header.get(0).map(|h| h.to_ascii_lowercase()) != Some("date".into()) || header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header date,<ticker>...".into(),
        });
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record_line(&rec);
        dates.push(parse_date(rec.get(0).unwrap_or(""), line)?);
        for c in 1..=tickers.len() {
            values.push(parse_field::<f64>(&rec, c, line, "return")?);
        }
    }
    let values = DMatrix::from_row_slice(dates.len(), tickers.len(), &values);
    ReturnsTable::new(dates, tickers, values)
}

/// Resampling grid for intraday prices.
#[derive(Clone, Debug, PartialEq)]
pub struct IntradayConfig {
    pub grid_minutes: u32,
    pub session_start: NaiveTime,
    pub session_end: NaiveTime,
}

impl Default for IntradayConfig {
    fn default() -> Self {
        Self {
            grid_minutes: 5,
            session_start: NaiveTime::from_hms_opt(9, 30, 0).unwrap(),
            session_end: NaiveTime::from_hms_opt(16, 0, 0).unwrap(),
        }
    }
}

impl IntradayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_minutes == 0 {
            return Err(Error::InvalidParameter("grid spacing must be positive".into()));
        }
        if self.session_end <= self.session_start {
            return Err(Error::InvalidParameter("session must end after it starts".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<NaiveTime> {
        let step = chrono::Duration::minutes(self.grid_minutes as i64);
        let mut out = vec![self.session_start];
        let mut t = self.session_start;
        while t + step <= self.session_end && t + step > t {
            t += step;
            out.push(t);
        }
        out
    }
}

/// Result of intraday ingestion.
#[derive(Clone, Debug)]
pub struct IntradayData {
    pub panel: ReturnPanel,
    /// Open-to-close log return per date (sum of intraday log returns).
    pub daily_returns: ReturnsTable,
    /// Dates dropped because some ticker had no trades.
    pub skipped: Vec<NaiveDate>,
}

fn parse_time(raw: &str, line: usize) -> Result<NaiveTime> {
    NaiveTime::parse_from_str(raw, "%H:%M:%S")
        .or_else(|_| NaiveTime::parse_from_str(raw, "%H:%M"))
        .map_err(|_| Error::Parse {
            line,
            msg: format!("invalid time {raw:?}"),
        })
}

/// Loads long-form `date,time,ticker,price` ticks and samples each ticker
/// on the grid with the previous-tick rule. Tickers are ordered alphabetically.
pub fn load_intraday_csv(path: &Path, cfg: &IntradayConfig) -> Result<IntradayData> {
    cfg.validate()?;
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, &["date", "time", "ticker", "price"])?;
    let mut ticks: BTreeMap<NaiveDate, BTreeMap<String, Vec<(NaiveTime, f64)>>> = BTreeMap::new();
    let mut tickers = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record_line(&rec);
        let date = parse_date(rec.get(0).unwrap_or(""), line)?;
        let time = parse_time(rec.get(1).unwrap_or(""), line)?;
        let ticker = rec.get(2).unwrap_or("").to_string();
        if ticker.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty ticker".into(),
            });
        }
        let price: f64 = parse_field(&rec, 3, line, "price")?;
        if !(price > 0.0) || !price.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("price must be positive, found {price}"),
            });
        }
        tickers.insert(ticker.clone());
        ticks.entry(date).or_default().entry(ticker).or_default().push((time, price));
    }
    let tickers: Vec<String> = tickers.into_iter().collect();
    let grid = cfg.grid();
    if grid.len() < 2 {
        return Err(Error::InvalidParameter("grid has fewer than two points".into()));
    }
    let mut days = Vec::new();
    let mut daily = Vec::new();
    let mut skipped = Vec::new();
    for (date, by_ticker) in ticks {
        let in_session = |v: &Vec<(NaiveTime, f64)>| {
            v.iter()
                .any(|(t, _)| *t >= cfg.session_start && *t <= cfg.session_end)
        };
        if tickers.iter().any(|t| !by_ticker.get(t).is_some_and(in_session)) {
            log::warn!("skipping {date}: not every ticker traded in session");
            skipped.push(date);
            continue;
        }
        let mut sampled: Vec<Vec<f64>> = Vec::with_capacity(tickers.len());
        for t in &tickers {
            let mut series: Vec<(NaiveTime, f64)> = by_ticker[t]
                .iter()
                .copied()
                .filter(|(tm, _)| *tm >= cfg.session_start && *tm <= cfg.session_end)
                .collect();
            series.sort_by_key(|(tm, _)| *tm);
            // Previous-tick sampling; grid points before the first trade take the first trade.
            let mut k = 0;
            let mut out = Vec::with_capacity(grid.len());
            for g in &grid {
                while k + 1 < series.len() && series[k + 1].0 <= *g {
                    k += 1;
                }
                out.push(series[k].1);
            }
            sampled.push(out);
        }
        let prices: Vec<DVector<f64>> = (0..grid.len())
            .map(|g| DVector::from_iterator(tickers.len(), sampled.iter().map(|s| s[g])))
            .collect();
        let returns = log_returns(&prices)?;
        let total = returns.iter().fold(DVector::zeros(tickers.len()), |acc, r| acc + r);
        daily.extend(total.iter().copied());
        days.push((date, returns));
    }
    let dates: Vec<NaiveDate> = days.iter().map(|(d, _)| *d).collect();
    let values = DMatrix::from_row_slice(dates.len(), tickers.len(), &daily);
    let daily_returns = ReturnsTable::new(dates, tickers.clone(), values)?;
    Ok(IntradayData {
        panel: ReturnPanel::new(tickers, days)?,
        daily_returns,
        skipped,
    })
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Saves network weights as zero-padded square MatBin records (key = layer index)
/// plus a `<path>.manifest` text file with the architecture.
pub fn save_weights(path: &Path, net: &Network) -> Result<()> {
    let shapes = net.spec.weight_shapes();
    let side = shapes.iter().map(|&(r, c)| r.max(c)).max().unwrap_or(0);
    let padded: Vec<DMatrix<f64>> = net
        .weights
        .iter()
        .map(|w| {
            let mut m = DMatrix::zeros(side, side);
            m.view_mut((0, 0), w.value.shape()).copy_from(&w.value);
            m
        })
        .collect();
    let records: Vec<(i64, &DMatrix<f64>)> = padded.iter().enumerate().map(|(k, m)| (k as i64, m)).collect();
    write_matbin_raw(path, side, &records)?;
    let dims: Vec<String> = net.spec.layer_dims.iter().map(usize::to_string).collect();
    let shapes: Vec<String> = shapes.iter().map(|(r, c)| format!("{r}x{c}")).collect();
    let mut f = fs::File::create(manifest_path(path))?;
    writeln!(f, "input_dim = {}", net.spec.input_dim)?;
    writeln!(f, "layer_dims = {}", dims.join(","))?;
    writeln!(f, "eps_rectify = {:e}", net.spec.eps_rectify)?;
    writeln!(f, "weight_shapes = {}", shapes.join(","))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(manifest_path(path))?;
    let mut fields = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected key = value".into(),
        })?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| Error::Format(format!("weights manifest lacks {k}")))
    };
    let bad = |k: &str| Error::Format(format!("malformed {k} in weights manifest"));
    let input_dim: usize = get("input_dim")?.parse().map_err(|_| bad("input_dim"))?;
    let layer_dims = get("layer_dims")?
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad("layer_dims")))
        .collect::<Result<Vec<_>>>()?;
    let eps_rectify: f64 = get("eps_rectify")?.parse().map_err(|_| bad("eps_rectify"))?;
    let spec = NetworkSpec {
        input_dim,
        layer_dims,
        eps_rectify,
    };
    spec.validate()?;
    let shapes = spec.weight_shapes();
    let (_, records) = read_matbin_raw(path)?;
    if records.len() != shapes.len() {
        return Err(Error::Format(format!(
            "{} weight records for {} layers",
            records.len(),
            shapes.len()
        )));
    }
    let mut weights = Vec::with_capacity(shapes.len());
    for ((key, m), (r, c)) in records.into_iter().zip(shapes) {
        if m.nrows() < r.max(c) {
            return Err(Error::Format(format!("weight record {key} smaller than {r}x{c}")));
        }
        weights.push(m.view((0, 0), (r, c)).clone_owned());
    }
    let net = Network::from_weights(spec, weights)?;
    debug_assert!(net.weights.iter().all(|w: &StiefelParam| w.value.iter().all(|v| v.is_finite())));
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn day(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap() + chrono::Duration::days(i)
    }

    fn random_series(n: usize, t: usize, seed: u64) -> CovSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats = (0..t)
            .map(|_| {
                let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                SpdMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 1e-3).unwrap()
            })
            .collect();
        CovSeries::new((0..t as i64).map(day).collect(), mats).unwrap()
    }

    #[test]
    fn matbin_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let s = random_series(4, 7, 1);
        save_series(&path, &s, SeriesFormat::MatBin).unwrap();
        let back = load_series(&path, SeriesFormat::MatBin).unwrap();
        assert_eq!(back.dates(), s.dates());
        for (a, b) in back.matrices().iter().zip(s.matrices()) {
            assert!(a.matrix().iter().zip(b.matrix().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"SPDS");
        assert_eq!(bytes.len(), 20 + 7 * (8 + 8 * 16));
    }

    #[test]
    fn truncated_matbin_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        save_series(&path, &random_series(3, 5, 2), SeriesFormat::MatBin).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [3, 19, bytes.len() - 1, bytes.len() - 80] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load_series(&path, SeriesFormat::MatBin), Err(Error::Format(_))));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(load_series(&path, SeriesFormat::MatBin).is_err());
    }

    #[test]
    fn csv_long_single_day() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "date,row,col,value\n2020-01-02,0,0,2.5\n2020-01-02,0,1,0.5\n2020-01-02,1,1,1.0\n").unwrap();
        let s = load_series(&path, SeriesFormat::CsvLong).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.matrices()[0].matrix(), &DMatrix::from_row_slice(2, 2, &[2.5, 0.5, 0.5, 1.0]));
    }

    #[test]
    fn csv_long_round_trip_keeps_15_digits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = random_series(3, 4, 3);
        save_series(&path, &s, SeriesFormat::CsvLong).unwrap();
        let back = load_series(&path, SeriesFormat::CsvLong).unwrap();
        for (a, b) in back.matrices().iter().zip(s.matrices()) {
            for (x, y) in a.matrix().iter().zip(b.matrix().iter()) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn csv_long_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let cases = [
            "day,row,col,value\n2020-01-02,0,0,1\n",
            "date,row,col,value\n2020-01-02,1,0,1\n",
            "date,row,col,value\n2020-01-03,0,0,1\n2020-01-02,0,0,1\n",
            "date,row,col,value\n2020-01-02,0,0,1\n2020-01-02,1,1,1\n",
            "date,row,col,value\n2020-01-02,0,0,abc\n",
            "date,row,col,value\n2020-13-02,0,0,1\n",
        ];
        for c in cases {
            fs::write(&path, c).unwrap();
            assert!(load_series(&path, SeriesFormat::CsvLong).is_err(), "{c}");
        }
    }

    #[test]
    fn returns_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let t = ReturnsTable::new(
            vec![day(0), day(1)],
            vec!["A".into(), "B".into()],
            DMatrix::from_row_slice(2, 2, &[0.01, -0.02, 0.3, 1e-9]),
        )
        .unwrap();
        save_returns_csv(&path, &t).unwrap();
        assert_eq!(load_returns_csv(&path).unwrap(), t);
        assert_eq!(t.select(&[day(1)]).unwrap()[(0, 0)], 0.3);
        assert!(t.select(&[day(5)]).is_err());
    }

    #[test]
    fn intraday_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ticks.csv");
        let csv = "date,time,ticker,price\n\
            2020-01-02,09:30:00,B,10\n\
            2020-01-02,09:30:00,A,100\n\
            2020-01-02,09:37:00,A,110\n\
            2020-01-02,09:40:00,B,20\n\
            2020-01-03,09:31:00,A,100\n";
        fs::write(&path, csv).unwrap();
        let cfg = IntradayConfig {
            grid_minutes: 5,
            session_start: NaiveTime::from_hms_opt(9, 30, 0).unwrap(),
            session_end: NaiveTime::from_hms_opt(9, 40, 0).unwrap(),
        };
        let data = load_intraday_csv(&path, &cfg).unwrap();
        assert_eq!(data.panel.tickers, vec!["A", "B"]);
        assert_eq!(data.skipped, vec![NaiveDate::from_ymd_opt(2020, 1, 3).unwrap()]);
        let (_, rets) = &data.panel.days[0];
        // Grid 9:30, 9:35, 9:40: A = 100, 100, 110; B = 10, 10, 20.
        assert_eq!(rets.len(), 2);
        assert_eq!(rets[0], DVector::from_vec(vec![0.0, 0.0]));
        assert!((rets[1][0] - (1.1f64).ln()).abs() < 1e-15);
        assert!((rets[1][1] - (2.0f64).ln()).abs() < 1e-15);
        let d = &data.daily_returns.values;
        assert!((d[(0, 0)] - (1.1f64).ln()).abs() < 1e-15);
        let s = data.panel.realized_series().unwrap();
        assert!((s.matrices()[0].matrix()[(0, 1)] - (1.1f64).ln() * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let net = Network::init(NetworkSpec::default_for(6, 2), 9).unwrap();
        save_weights(&path, &net).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.spec, net.spec);
        for (a, b) in back.weights.iter().zip(&net.weights) {
            assert_eq!(a.value, b.value);
        }
        assert!(back.stiefel_defect() <= 1e-8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn matbin_round_trip(n in 1usize..5, t in 0usize..6, seed in any::<u64>()) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("p.bin");
                let s = random_series(n, t, seed);
                save_series(&path, &s, SeriesFormat::MatBin).unwrap();
                let back = load_series(&path, SeriesFormat::MatBin).unwrap();
                prop_assert_eq!(back.dates(), s.dates());
                for (a, b) in back.matrices().iter().zip(s.matrices()) {
                    prop_assert_eq!(a.matrix(), b.matrix());
                }
            }
        }
    }
}
