//! Checkpoints, result tables and SVG charts.
//!
//! Checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! "GFPIC1"            magic
//! u32                 format version
//! u8                  kind: 0 pilot, 1 data-aided, 2 non-coherent, 3 fcnn
//! u64                 training seed
//! u32 + bytes         config text (every key, parses back to the training config)
//! f64                 sigma_gamma
//! 3 x (u8 + f64)      sigma_pilot, sigma_data, sigma_nc (flag 1 when present)
//! f64                 decision threshold
//! u32                 module count
//! per module:         u32 layer count n, n x u32 layer sizes, u8 output (0 identity, 1 sigmoid)
//! payload             f32 parameters of every module in table order, each module
//!                     layer by layer as weights (row-major out x in) then biases
//! ```
//!
//! Receiver modules are stored CE stage-major and device-minor, then DD in the same
//! order, then AD; the FCNN stores its CE network then its AD network.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::{parse_config_str, to_config_string, Scheme, SystemConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::evalkit::{MetricsReport, SweepRow};
use crate::nn::{Mlp, MlpSpec, OutputActivation};
use crate::picnet::{module_specs, PicDims, PicKind, PicModel};
use crate::prep::{ScaledCodebook, Standardizer};
use crate::sysmodel::generate_codebook;
use crate::trainer::FcnnModel;

pub const MAGIC: &[u8; 6] = b"GFPIC1";
pub const VERSION: u32 = 1;

/// A trained receiver of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Pic(PicModel),
    Fcnn(FcnnModel),
}

impl Model {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Pic(m) => m.kind.as_str(),
            Model::Fcnn(_) => "fcnn",
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Model::Pic(m) => m.threshold,
            Model::Fcnn(m) => m.threshold,
        }
    }

    pub fn set_threshold(&mut self, tau: f64) {
        match self {
            Model::Pic(m) => m.threshold = tau,
            Model::Fcnn(m) => m.threshold = tau,
        }
    }

    pub fn standardizer(&self) -> &Standardizer {
        match self {
            Model::Pic(m) => &m.standardizer,
            Model::Fcnn(m) => &m.standardizer,
        }
    }

    fn modules(&self) -> Vec<&Mlp> {
        match self {
            Model::Pic(m) => m.modules().collect(),
            Model::Fcnn(m) => vec![&m.ce, &m.ad],
        }
    }

    fn kind_code(&self) -> u8 {
        match self {
            Model::Pic(m) => match m.kind {
                PicKind::PilotOnly => 0,
                PicKind::DataAided => 1,
                PicKind::NonCoherent => 2,
            },
            Model::Fcnn(_) => 3,
        }
    }
}

/// A model together with the configuration it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub sys: SystemConfig,
    pub train: TrainConfig,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_opt(out: &mut Vec<u8>, v: Option<f64>) {
    out.push(u8::from(v.is_some()));
    put_f64(out, v.unwrap_or(0.0));
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(ck.model.kind_code());
    out.extend_from_slice(&ck.train.seed.to_le_bytes());
    let text = to_config_string(&ck.sys, &ck.train);
    put_u32(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    let std = ck.model.standardizer();
    put_f64(&mut out, std.sigma_gamma);
    put_opt(&mut out, std.sigma_pilot);
    put_opt(&mut out, std.sigma_data);
    put_opt(&mut out, std.sigma_nc);
    put_f64(&mut out, ck.model.threshold());
    let modules = ck.model.modules();
    put_u32(&mut out, modules.len() as u32);
    for m in &modules {
        put_u32(&mut out, m.spec.layer_sizes.len() as u32);
        for &s in &m.spec.layer_sizes {
            put_u32(&mut out, s as u32);
        }
        out.push(match m.spec.output {
            OutputActivation::Identity => 0,
            OutputActivation::Sigmoid => 1,
        });
    }
    for m in &modules {
        for &p in m.params() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(ck))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn opt(&mut self) -> Result<Option<f64>> {
        let flag = self.u8()?;
        let v = self.f64()?;
        match flag {
            0 => Ok(None),
            1 => Ok(Some(v)),
            f => Err(Error::Checkpoint(format!("bad presence flag {f}"))),
        }
    }
}

fn expected_specs(kind: u8, sys: &SystemConfig) -> Result<Vec<MlpSpec>> {
    if kind == 3 {
        let (ce, ad) = crate::trainer::fcnn_specs(sys);
        return Ok(vec![ce, ad]);
    }
    let kind = match kind {
        0 => PicKind::PilotOnly,
        1 => PicKind::DataAided,
        2 => PicKind::NonCoherent,
        k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
    };
    let dims = PicDims::from_config(kind, sys)?;
    let (ce, dd, ad) = module_specs(kind, &dims, &sys.hidden_layers);
    let per_stage = if sys.tie_devices { 1 } else { dims.n_devices };
    let mut out = vec![ce; dims.n_stages * per_stage];
    if let Some(dd) = dd {
        out.extend(std::iter::repeat_n(dd, dims.n_stages * per_stage));
    }
    if let Some(ad) = ad {
        out.extend(std::iter::repeat_n(ad, per_stage));
    }
    Ok(out)
}

/// Parses checkpoint bytes; any inconsistency is an error and no partial model is returned.
pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| Error::Checkpoint("not a checkpoint file".into()))? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {VERSION}")));
    }
    let kind = r.u8()?;
    let seed = r.u64()?;
    let n_text = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(n_text)?).map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
    let (sys, train) = parse_config_str(text)?;
    if train.seed != seed {
        return Err(Error::Checkpoint("seed header disagrees with the config echo".into()));
    }
    let std = Standardizer {
        sigma_gamma: r.f64()?,
        sigma_pilot: r.opt()?,
        sigma_data: r.opt()?,
        sigma_nc: r.opt()?,
    };
    let threshold = r.f64()?;
    let n_modules = r.u32()? as usize;
    let expected = expected_specs(kind, &sys)?;
    if n_modules != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{n_modules} modules stored, the configuration needs {}",
            expected.len()
        )));
    }
    let mut specs = Vec::with_capacity(n_modules);
    for (i, want) in expected.iter().enumerate() {
        let n = r.u32()? as usize;
        if n > 1024 {
            return Err(Error::Checkpoint(format!("module {i} claims {n} layers")));
        }
        let sizes = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let output = match r.u8()? {
            0 => OutputActivation::Identity,
            1 => OutputActivation::Sigmoid,
            o => return Err(Error::Checkpoint(format!("module {i}: unknown activation {o}"))),
        };
        let spec = MlpSpec {
            layer_sizes: sizes,
            output,
        };
        if &spec != want {
            return Err(Error::Checkpoint(format!(
                "module {i}: stored layer sizes {:?}, configuration (K={}, L={}) needs {:?}",
                spec.layer_sizes, sys.n_devices, sys.seq_len, want.layer_sizes
            )));
        }
        specs.push(spec);
    }
    let mut modules = Vec::with_capacity(n_modules);
    for spec in &specs {
        let flat = (0..spec.n_params())
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        modules.push(Mlp::from_flat(spec, &flat)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let codebook = generate_codebook(&sys, sys.codebook_seed)?;
    let model = if kind == 3 {
        let ad = modules.pop().expect("two modules");
        let ce = modules.pop().expect("two modules");
        Model::Fcnn(FcnnModel::assemble(ce, ad, std, codebook, threshold)?)
    } else {
        let kind = [PicKind::PilotOnly, PicKind::DataAided, PicKind::NonCoherent][kind as usize];
        let dims = PicDims::from_config(kind, &sys)?;
        let per_stage = if sys.tie_devices { 1 } else { dims.n_devices };
        let mut it = modules.into_iter();
        let mut stages = |n: usize| -> Vec<Vec<Mlp>> {
            (0..n).map(|_| it.by_ref().take(per_stage).collect()).collect()
        };
        let ce = stages(dims.n_stages);
        let dd = if kind == PicKind::PilotOnly { Vec::new() } else { stages(dims.n_stages) };
        let ad: Vec<Mlp> = it.collect();
        let scb = ScaledCodebook::new(codebook, &std);
        Model::Pic(PicModel::assemble(
            kind,
            dims,
            sys.constellation,
            sys.hidden_layers.clone(),
            sys.tie_devices,
            ce,
            dd,
            ad,
            std,
            scb,
            threshold,
        )?)
    };
    Ok(Checkpoint { model, sys, train })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path)?;
    checkpoint_from_bytes(&buf)
}

/// Fixed column order of result tables.
pub const RESULTS_HEADER: &str =
    "framework,kind,eps,rho_dbm,tau_coh,L,T,J,tau_thr,seed,n_samples,p_fa,p_md,p_err,nmse_db,ber,wall_time_s";

/// One result line. With `timing` off the wall time is written as 0 so that
/// repeated runs produce identical bytes.
pub fn result_line(framework: &str, sys: &SystemConfig, tau_thr: f64, seed: u64, r: &MetricsReport, timing: bool) -> String {
    let kind = match sys.scheme {
        Scheme::Coherent => "coherent",
        Scheme::NonCoherent => "non-coherent",
    };
    format!(
        "{framework},{kind},{},{},{},{},{},{},{},{seed},{},{},{},{},{},{},{}",
        sys.activity_prob,
        sys.tx_power_dbm,
        sys.coherence_len,
        sys.seq_len,
        sys.n_stages,
        sys.n_bits,
        tau_thr,
        r.n_samples,
        r.p_fa,
        r.p_md,
        r.p_err,
        r.nmse_db,
        r.ber,
        if timing { r.wall_time_s } else { 0.0 }
    )
}

pub fn results_csv(rows: &[SweepRow], timing: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&result_line(&row.framework, &row.sys, row.tau_thr, row.seed, &row.report, timing));
        out.push('\n');
    }
    out
}

/// A parsed CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::InvalidArgument(format!("CSV header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(|h| h.is_empty()) {
            return Err(Error::InvalidArgument("CSV has no header".into()));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })?;
            rows.push(record.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("CSV has no column {name:?}")))
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = start;
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Static line chart of `y` against `x`, one series per value of the `framework`
/// column (a single series when the column is absent).
pub fn line_chart_svg(table: &Table, x: &str, y: &str) -> Result<String> {
    let xi = table.column(x)?;
    let yi = table.column(y)?;
    let group = table.column("framework").ok();
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, row) in table.rows.iter().enumerate() {
        let parse = |c: usize| {
            row[c].parse::<f64>().map_err(|_| Error::Parse {
                line: i + 2,
                msg: format!("{:?} is not a number", row[c]),
            })
        };
        let (vx, vy) = (parse(xi)?, parse(yi)?);
        if !(vx.is_finite() && vy.is_finite()) {
            continue;
        }
        let name = group.map(|g| row[g].clone()).unwrap_or_else(|| y.to_string());
        series.entry(name).or_default().push((vx, vy));
    }
    if series.is_empty() {
        return Err(Error::InvalidArgument("no finite points to plot".into()));
    }
    let pts = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(a, b) in pts {
        x0 = x0.min(a);
        x1 = x1.max(a);
        y0 = y0.min(b);
        y1 = y1.max(b);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 160.0, 20.0, 50.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |v: f64| ml + (v - x0) / (x1 - x0) * pw;
    let sy = |v: f64| mt + ph - (v - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(x0, x1) {
        let px = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 18.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(y0, y1) {
        let py = sy(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{ml}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            ml - 5.0,
            ml - 8.0,
            py + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        h - 10.0,
        escape(x)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|&(a, b)| format!("{:.2},{:.2}", sx(a), sy(b))).collect();
        let _ = writeln!(
            s,
            r#"<g class="series" data-name="{}"><polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(name),
            path.join(" ")
        );
        for &(a, b) in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(a), sy(b));
        }
        let ly = mt + 10.0 + 18.0 * i as f64;
        let lx = ml + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
