//! File formats: CSV and PGM exports, the compressed trace archive, the
//! projection container and reconstruction checkpoints. Every output embeds
//! the configuration hash; all binary containers are little-endian with a
//! four-byte magic and a version byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TomoError};
use crate::geometry::MediumMap;
use crate::grid::{Grid2, GridGeometry};
use crate::projection::{ProjectionVector, SqrtEpsImage};
use crate::recon::{ReconState, ResidualRecord, TrainingPair};
use crate::signal::SignalTrace;

const PROJECTION_MAGIC: &[u8; 4] = b"TOAP";
const TRACE_MAGIC: &[u8; 4] = b"TOAS";
const CHECKPOINT_MAGIC: &[u8; 4] = b"TOAC";
const FORMAT_VERSION: u8 = 1;

pub fn hash_hex(hash: u64) -> String {
    format!("{hash:016x}")
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

/// 8-bit binary PGM of a grid, mapping `[lo, hi]` linearly to `[0, 255]`.
pub fn write_pgm(path: &Path, grid: &Grid2<f64>, lo: f64, hi: f64, config_hash: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P5")?;
    writeln!(w, "# config_hash={}", hash_hex(config_hash))?;
    writeln!(w, "{} {}", grid.nx, grid.ny)?;
    writeln!(w, "255")?;
    let span = hi - lo;
    // Rows top to bottom mirror y so the image reads with +y up.
    for j in (0..grid.ny).rev() {
        for i in 0..grid.nx {
            let v = *grid.get(i, j);
            let t = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            w.write_all(&[(t * 255.0).round() as u8])?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Medium or image values as CSV, row-major with grid metadata comments.
pub fn write_grid_csv(
    path: &Path,
    grid: &Grid2<f64>,
    geom: GridGeometry,
    config_hash: u64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config_hash={}", hash_hex(config_hash))?;
    writeln!(w, "# nx={} ny={} dx={:e}", geom.nx, geom.ny, geom.dx)?;
    for j in 0..geom.ny {
        let row: Vec<String> = (0..geom.nx).map(|i| format!("{:e}", grid.get(i, j))).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_medium_csv(path: &Path, medium: &MediumMap, config_hash: u64) -> Result<()> {
    write_grid_csv(path, &medium.epsilon, medium.geom, config_hash)
}

/// Single trace export: `time_s,energy`.
pub fn write_trace_csv(path: &Path, trace: &SignalTrace, config_hash: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config_hash={}", hash_hex(config_hash))?;
    writeln!(w, "time_s,energy")?;
    for (k, &v) in trace.samples.iter().enumerate() {
        writeln!(w, "{:e},{:e}", trace.sample_time(k), v)?;
    }
    Ok(())
}

/// Projection CSV: `source,receiver,arrival_s,valid`.
pub fn write_projection_csv(path: &Path, y: &ProjectionVector, config_hash: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config_hash={}", hash_hex(config_hash))?;
    writeln!(w, "source,receiver,arrival_s,valid")?;
    for s in 0..y.sources {
        for r in 0..y.receivers {
            let k = y.pair(s, r);
            writeln!(w, "{s},{r},{:e},{}", y.arrival[k], u8::from(y.valid[k]))?;
        }
    }
    Ok(())
}

pub fn read_projection_csv(path: &Path) -> Result<ProjectionVector> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<(usize, usize, f64, bool)> = Vec::new();
    let mut max_s = 0usize;
    let mut max_r = 0usize;
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("source") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TomoError::SpecError(format!("bad projection row: {line}")));
        }
        let parse_err = |what: &str| TomoError::SpecError(format!("bad {what} in: {line}"));
        let s: usize = fields[0].parse().map_err(|_| parse_err("source"))?;
        let r: usize = fields[1].parse().map_err(|_| parse_err("receiver"))?;
        let arrival: f64 = fields[2].parse().map_err(|_| parse_err("arrival"))?;
        let valid = fields[3] == "1";
        max_s = max_s.max(s);
        max_r = max_r.max(r);
        rows.push((s, r, arrival, valid));
    }
    if rows.is_empty() {
        return Err(TomoError::NoData("projection csv has no rows".into()));
    }
    let mut y = ProjectionVector::invalid(max_s + 1, max_r + 1);
    for (s, r, arrival, valid) in rows {
        let k = y.pair(s, r);
        y.arrival[k] = arrival;
        y.valid[k] = valid;
    }
    Ok(y)
}

/// Per-iteration metrics CSV. The `nrmse` column appears only when a truth
/// image was available.
pub struct MetricsWriter {
    w: BufWriter<File>,
    with_nrmse: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, config_hash: u64, with_nrmse: bool) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# config_hash={}", hash_hex(config_hash))?;
        if with_nrmse {
            writeln!(w, "iter,stage,subset,E,valid_pairs,nrmse,accepted,fresh_pairs_used")?;
        } else {
            writeln!(w, "iter,stage,subset,E,valid_pairs,accepted,fresh_pairs_used")?;
        }
        Ok(MetricsWriter { w, with_nrmse })
    }

    pub fn append(&mut self, r: &ResidualRecord) -> Result<()> {
        if self.with_nrmse {
            writeln!(
                self.w,
                "{},{},{},{:e},{},{:e},{},{}",
                r.iteration,
                r.stage,
                r.subset,
                r.e_after,
                r.valid_pairs,
                r.nrmse.unwrap_or(f64::NAN),
                u8::from(r.accepted),
                r.fresh_pairs
            )?;
        } else {
            writeln!(
                self.w,
                "{},{},{},{:e},{},{},{}",
                r.iteration,
                r.stage,
                r.subset,
                r.e_after,
                r.valid_pairs,
                u8::from(r.accepted),
                r.fresh_pairs
            )?;
        }
        self.w.flush()?;
        Ok(())
    }
}

/// Parsed metrics row (subset of the record, as persisted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub stage: usize,
    pub subset: usize,
    pub e: f64,
    pub valid_pairs: usize,
    pub nrmse: Option<f64>,
    pub accepted: bool,
    pub fresh_pairs: usize,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    let mut with_nrmse = false;
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("iter,") {
            with_nrmse = line.contains(",nrmse,");
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let want = if with_nrmse { 8 } else { 7 };
        if f.len() != want {
            return Err(TomoError::SpecError(format!("bad metrics row: {line}")));
        }
        let err = |what: &str| TomoError::SpecError(format!("bad {what} in metrics row: {line}"));
        let mut idx = 0usize;
        let mut next = || {
            let v = f[idx];
            idx += 1;
            v
        };
        let iteration: u64 = next().parse().map_err(|_| err("iter"))?;
        let stage: usize = next().parse().map_err(|_| err("stage"))?;
        let subset: usize = next().parse().map_err(|_| err("subset"))?;
        let e: f64 = next().parse().map_err(|_| err("E"))?;
        let valid_pairs: usize = next().parse().map_err(|_| err("valid_pairs"))?;
        let nrmse = if with_nrmse {
            Some(next().parse::<f64>().map_err(|_| err("nrmse"))?)
        } else {
            None
        };
        let accepted = next() == "1";
        let fresh_pairs: usize = next().parse().map_err(|_| err("fresh_pairs"))?;
        rows.push(MetricsRow { iteration, stage, subset, e, valid_pairs, nrmse, accepted, fresh_pairs });
    }
    if rows.is_empty() {
        return Err(TomoError::NoData(format!("{} has no metrics rows", path.display())));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers
// ---------------------------------------------------------------------------

struct Bin<W: Write>(W);

impl<W: Write> Bin<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.0.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u128(&mut self, v: u128) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
    fn bools(&mut self, vs: &[bool]) -> Result<()> {
        for chunk in vs.chunks(8) {
            let mut byte = 0u8;
            for (k, &b) in chunk.iter().enumerate() {
                if b {
                    byte |= 1 << k;
                }
            }
            self.u8(byte)?;
        }
        Ok(())
    }
}

struct Un<R: Read>(R);

impl<R: Read> Un<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn u128(&mut self) -> Result<u128> {
        let mut b = [0u8; 16];
        self.0.read_exact(&mut b)?;
        Ok(u128::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn bools(&mut self, n: usize) -> Result<Vec<bool>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n.div_ceil(8) {
            let byte = self.u8()?;
            for k in 0..8 {
                if out.len() < n {
                    out.push(byte & (1 << k) != 0);
                }
            }
        }
        Ok(out)
    }
}

fn check_magic(un: &mut Un<impl Read>, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    un.0.read_exact(&mut m)?;
    if &m != magic {
        return Err(TomoError::SpecError(format!("{what}: bad magic")));
    }
    let version = un.u8()?;
    if version != FORMAT_VERSION {
        return Err(TomoError::SpecError(format!("{what}: unsupported version {version}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Projection binary container
// ---------------------------------------------------------------------------

pub fn write_projection_bin(path: &Path, y: &ProjectionVector, config_hash: u64) -> Result<()> {
    let mut b = Bin(BufWriter::new(File::create(path)?));
    b.0.write_all(PROJECTION_MAGIC)?;
    b.u8(FORMAT_VERSION)?;
    b.u64(config_hash)?;
    b.u32(y.sources as u32)?;
    b.u32(y.receivers as u32)?;
    b.f64s(&y.arrival)?;
    b.bools(&y.valid)?;
    Ok(())
}

pub fn read_projection_bin(path: &Path) -> Result<(ProjectionVector, u64)> {
    let mut u = Un(BufReader::new(File::open(path)?));
    check_magic(&mut u, PROJECTION_MAGIC, "projection")?;
    let hash = u.u64()?;
    let sources = u.u32()? as usize;
    let receivers = u.u32()? as usize;
    let arrival = u.f64s(sources * receivers)?;
    let valid = u.bools(sources * receivers)?;
    Ok((ProjectionVector { sources, receivers, arrival, valid }, hash))
}

// ---------------------------------------------------------------------------
// Trace archive: one gzipped binary file per source
// ---------------------------------------------------------------------------

pub fn trace_archive_name(source: usize) -> String {
    format!("src_{source:04}.bin.gz")
}

pub fn write_trace_archive(
    path: &Path,
    source: usize,
    traces: &[SignalTrace],
    config_hash: u64,
) -> Result<()> {
    let enc = GzEncoder::new(BufWriter::new(File::create(path)?), Compression::fast());
    let mut b = Bin(enc);
    b.0.write_all(TRACE_MAGIC)?;
    b.u8(FORMAT_VERSION)?;
    b.u64(config_hash)?;
    b.u32(source as u32)?;
    b.u32(traces.len() as u32)?;
    for t in traces {
        b.f64(t.start_time)?;
        b.f64(t.sample_period)?;
        b.u32(t.samples.len() as u32)?;
        b.f64s(&t.samples)?;
    }
    b.0.finish()?;
    Ok(())
}

pub fn read_trace_archive(path: &Path) -> Result<(usize, Vec<SignalTrace>, u64)> {
    let mut u = Un(BufReader::new(GzDecoder::new(File::open(path)?)));
    check_magic(&mut u, TRACE_MAGIC, "trace archive")?;
    let hash = u.u64()?;
    let source = u.u32()? as usize;
    let count = u.u32()? as usize;
    let mut traces = Vec::with_capacity(count);
    for _ in 0..count {
        let start_time = u.f64()?;
        let sample_period = u.f64()?;
        let len = u.u32()? as usize;
        let samples = u.f64s(len)?;
        traces.push(SignalTrace { start_time, sample_period, samples });
    }
    Ok((source, traces, hash))
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

fn write_grid_f64(b: &mut Bin<impl Write>, grid: &Grid2<f64>) -> Result<()> {
    b.u32(grid.nx as u32)?;
    b.u32(grid.ny as u32)?;
    b.f64s(grid.as_slice())?;
    Ok(())
}

fn read_grid_f64(u: &mut Un<impl Read>) -> Result<Grid2<f64>> {
    let nx = u.u32()? as usize;
    let ny = u.u32()? as usize;
    Ok(Grid2::from_vec(nx, ny, u.f64s(nx * ny)?))
}

/// Persist the full reconstruction state. Resuming from this file continues
/// the run bit-identically.
pub fn write_checkpoint(path: &Path, state: &ReconState, config_hash: u64) -> Result<()> {
    let mut b = Bin(BufWriter::new(File::create(path)?));
    b.0.write_all(CHECKPOINT_MAGIC)?;
    b.u8(FORMAT_VERSION)?;
    b.u64(config_hash)?;
    b.u64(state.iteration)?;
    b.u32(state.stage as u32)?;
    b.u32(state.subset_rotation as u32)?;
    b.u64(state.seed)?;
    b.u128(state.rng.get_word_pos())?;
    match state.pinned_eval_subset {
        Some(s) => {
            b.u8(1)?;
            b.u32(s as u32)?;
        }
        None => {
            b.u8(0)?;
            b.u32(0)?;
        }
    }
    match state.cached_eval {
        Some((s, e, c)) => {
            b.u8(1)?;
            b.u32(s as u32)?;
            b.f64(e)?;
            b.u32(c as u32)?;
        }
        None => {
            b.u8(0)?;
            b.u32(0)?;
            b.f64(0.0)?;
            b.u32(0)?;
        }
    }
    b.f64(state.x.geom.dx)?;
    write_grid_f64(&mut b, &state.x.values)?;
    b.u32(state.x.mask.nx as u32)?;
    b.u32(state.x.mask.ny as u32)?;
    b.bools(state.x.mask.as_slice())?;
    b.u32(state.history.len() as u32)?;
    for r in &state.history {
        b.u64(r.iteration)?;
        b.u32(r.stage as u32)?;
        b.u32(r.subset as u32)?;
        b.u32(r.eval_subset as u32)?;
        b.f64(r.e_before)?;
        b.f64(r.e_after)?;
        b.u8(u8::from(r.accepted))?;
        b.u32(r.fresh_pairs as u32)?;
        b.u32(r.valid_pairs as u32)?;
        b.u8(u8::from(r.pinned))?;
        b.f64(r.step_bound)?;
        b.f64(r.step_max)?;
        match r.nrmse {
            Some(v) => {
                b.u8(1)?;
                b.f64(v)?;
            }
            None => {
                b.u8(0)?;
                b.f64(0.0)?;
            }
        }
    }
    b.u32(state.pool.len() as u32)?;
    for subset_pool in &state.pool {
        b.u32(subset_pool.len() as u32)?;
        for pair in subset_pool {
            write_grid_f64(&mut b, &pair.dx_image)?;
            b.u32(pair.dy.len() as u32)?;
            b.f64s(&pair.dy)?;
            b.bools(&pair.dy_valid)?;
            b.u32(pair.subset as u32)?;
            b.u32(pair.stage as u32)?;
            b.f64(pair.cap)?;
        }
    }
    Ok(())
}

/// Load a checkpoint, verifying it matches the active configuration hash.
pub fn read_checkpoint(path: &Path, expected_hash: u64) -> Result<ReconState> {
    let mut u = Un(BufReader::new(File::open(path)?));
    check_magic(&mut u, CHECKPOINT_MAGIC, "checkpoint")?;
    let hash = u.u64()?;
    if hash != expected_hash {
        return Err(TomoError::CheckpointMismatch(format!(
            "checkpoint config hash {} does not match active config {}",
            hash_hex(hash),
            hash_hex(expected_hash)
        )));
    }
    let iteration = u.u64()?;
    let stage = u.u32()? as usize;
    let subset_rotation = u.u32()? as usize;
    let seed = u.u64()?;
    let word_pos = u.u128()?;
    let pinned_flag = u.u8()?;
    let pinned_value = u.u32()? as usize;
    let cached_flag = u.u8()?;
    let cached_subset = u.u32()? as usize;
    let cached_e = u.f64()?;
    let cached_count = u.u32()? as usize;
    let dx = u.f64()?;
    let values = read_grid_f64(&mut u)?;
    let mnx = u.u32()? as usize;
    let mny = u.u32()? as usize;
    let mask_bits = u.bools(mnx * mny)?;
    let geom = GridGeometry { nx: values.nx, ny: values.ny, dx };
    let history_len = u.u32()? as usize;
    let mut history = Vec::with_capacity(history_len);
    for _ in 0..history_len {
        let iteration = u.u64()?;
        let stage = u.u32()? as usize;
        let subset = u.u32()? as usize;
        let eval_subset = u.u32()? as usize;
        let e_before = u.f64()?;
        let e_after = u.f64()?;
        let accepted = u.u8()? != 0;
        let fresh_pairs = u.u32()? as usize;
        let valid_pairs = u.u32()? as usize;
        let pinned = u.u8()? != 0;
        let step_bound = u.f64()?;
        let step_max = u.f64()?;
        let has_nrmse = u.u8()? != 0;
        let nrmse_v = u.f64()?;
        history.push(ResidualRecord {
            iteration,
            stage,
            subset,
            eval_subset,
            e_before,
            e_after,
            accepted,
            fresh_pairs,
            valid_pairs,
            pinned,
            step_bound,
            step_max,
            nrmse: if has_nrmse { Some(nrmse_v) } else { None },
        });
    }
    let pool_subsets = u.u32()? as usize;
    let mut pool = Vec::with_capacity(pool_subsets);
    for _ in 0..pool_subsets {
        let count = u.u32()? as usize;
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let dx_image = read_grid_f64(&mut u)?;
            let dy_len = u.u32()? as usize;
            let dy = u.f64s(dy_len)?;
            let dy_valid = u.bools(dy_len)?;
            let subset = u.u32()? as usize;
            let stage = u.u32()? as usize;
            let cap = u.f64()?;
            pairs.push(TrainingPair { dx_image, dy, dy_valid, subset, stage, cap });
        }
        pool.push(pairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(word_pos);
    Ok(ReconState {
        x: SqrtEpsImage {
            geom,
            values,
            mask: Grid2::from_vec(mnx, mny, mask_bits),
        },
        iteration,
        stage,
        subset_rotation,
        history,
        pool,
        seed,
        rng,
        pinned_eval_subset: (pinned_flag != 0).then_some(pinned_value),
        cached_eval: (cached_flag != 0).then_some((cached_subset, cached_e, cached_count)),
    })
}
