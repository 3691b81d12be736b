//! Observation instruments: per-step gate traces, the memory-influence
//! probe, and analytic state-size accounting for the DNC-versus-CBMU
//! comparison.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, ControllerKind};
use crate::error::{CoreError, Result};
use crate::memory::MuVariant;
use crate::model::{Model, ModelConfig, RunMode, StepRecord};
use crate::rng::SeedRng;
use crate::tasks::{encode, Sample, Vocabulary};
use crate::tensor::Tape;

/// Gating activity and output attribution for one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: usize,
    pub token: String,
    pub free_gates: Vec<f64>,
    pub alloc_gate: f64,
    pub write_gate: f64,
    /// Per read head; a content-only unit reports fixed (0, 1, 0).
    pub mode_backward: Vec<f64>,
    pub mode_content: Vec<f64>,
    pub mode_forward: Vec<f64>,
    pub write_entropy: f64,
    pub influence_pct: f64,
    pub is_answer: bool,
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn entropy(w: &[f64]) -> f64 {
    -w.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

fn influence_of(tape: &Tape, rec: &StepRecord) -> f64 {
    let mem = l1(tape.data(rec.memory_term));
    let mut bypass = vec![0.0; tape.data(rec.memory_term).len()];
    for &term in &rec.bypass_terms {
        for (b, v) in bypass.iter_mut().zip(tape.data(term)) {
            *b += v;
        }
    }
    100.0 * mem / (mem + l1(&bypass) + 1e-12)
}

/// Run one sample in eval mode and copy out the gate activity.
pub fn record_traces(model: &Model, sample: &Sample, vocab: &Vocabulary) -> Result<Vec<StepTrace>> {
    let enc = encode(sample, vocab)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut unused = SeedRng::new(0);
    let out = model.forward(&mut tape, &bound, &enc.rows, RunMode::Eval, &mut unused, true);

    let heads = model.config().mu.read_heads;
    let mut traces = Vec::with_capacity(out.records.len());
    for (t, rec) in out.records.iter().enumerate() {
        let sig = &rec.signals;
        let scalar = |id| tape.data(id)[0];
        let (mut b, mut c, mut f) = (Vec::new(), Vec::new(), Vec::new());
        match &sig.read_modes {
            Some(modes) => {
                for &m in modes {
                    let row = tape.data(m);
                    b.push(row[0]);
                    c.push(row[1]);
                    f.push(row[2]);
                }
            }
            None => {
                b = vec![0.0; heads];
                c = vec![1.0; heads];
                f = vec![0.0; heads];
            }
        }
        traces.push(StepTrace {
            t,
            token: vocab.token(sample.tokens[t]).to_string(),
            free_gates: sig.free_gates.iter().map(|&g| scalar(g)).collect(),
            alloc_gate: scalar(sig.alloc_gate),
            write_gate: scalar(sig.write_gate),
            mode_backward: b,
            mode_content: c,
            mode_forward: f,
            write_entropy: entropy(tape.data(rec.write_w)),
            influence_pct: influence_of(&tape, rec),
            is_answer: enc.mask[t],
        });
    }
    Ok(traces)
}

/// How much of each output came through the memory path, plus whether the
/// memory path alone would have answered the same way.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceReport {
    pub per_step: Vec<f64>,
    pub mean_pct: f64,
    /// Fraction of answer steps where the memory-only output and the full
    /// output pick the same token.
    pub agreement: f64,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub fn memory_influence(model: &Model, sample: &Sample, vocab: &Vocabulary) -> Result<InfluenceReport> {
    let enc = encode(sample, vocab)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut unused = SeedRng::new(0);
    let out = model.forward(&mut tape, &bound, &enc.rows, RunMode::Eval, &mut unused, true);

    let mut per_step = Vec::with_capacity(out.records.len());
    let mut asked = 0usize;
    let mut agreed = 0usize;
    for (t, rec) in out.records.iter().enumerate() {
        per_step.push(influence_of(&tape, rec));
        if enc.mask[t] {
            // zeroing the bypass cannot touch the state trajectory, so the
            // memory-only logits are just the memory term plus the bias
            let mut mem_only = tape.data(rec.memory_term).to_vec();
            if let Some(b) = rec.bias {
                for (m, v) in mem_only.iter_mut().zip(tape.data(b)) {
                    *m += v;
                }
            }
            asked += 1;
            agreed += (argmax(&mem_only) == argmax(tape.data(rec.logits))) as usize;
        }
    }
    let mean_pct = per_step.iter().sum::<f64>() / per_step.len().max(1) as f64;
    Ok(InfluenceReport {
        per_step,
        mean_pct,
        agreement: if asked == 0 { 1.0 } else { agreed as f64 / asked as f64 },
    })
}

/// Analytic per-step float counts for everything BPTT has to retain,
/// with and without the temporal linkage mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSizeReport {
    pub memory_matrix: usize,
    pub linkage: usize,
    pub precedence: usize,
    pub usage: usize,
    pub write_weighting: usize,
    pub read_weightings: usize,
    pub read_vectors: usize,
    pub controller_state: usize,
    pub controller_preactivations: usize,
    pub interface_dnc: usize,
    pub interface_cbmu: usize,
    pub per_step_dnc: usize,
    pub per_step_cbmu: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub total_dnc: usize,
    pub total_cbmu: usize,
    /// `1 - cbmu/dnc` per step.
    pub reduction: f64,
}

impl StateSizeReport {
    /// Floats the linkage mechanism alone holds per step.
    pub fn linkage_mechanism(&self) -> usize {
        self.linkage + self.precedence
    }

    /// Memory-unit state per step including linkage.
    pub fn mu_state_dnc(&self) -> usize {
        self.memory_matrix
            + self.linkage
            + self.precedence
            + self.usage
            + self.write_weighting
            + self.read_weightings
            + self.read_vectors
    }

    pub fn linkage_share(&self) -> f64 {
        self.linkage_mechanism() as f64 / self.mu_state_dnc() as f64
    }
}

fn controller_floats(cfg: &ControllerConfig) -> (usize, usize) {
    let state: usize = cfg.widths.iter().map(|c| 2 * c).sum();
    let preact: usize = cfg
        .widths
        .iter()
        .map(|c| match cfg.kind {
            ControllerKind::Lstm => 4 * c,
            ControllerKind::Dense => *c,
        })
        .sum();
    (state, preact)
}

pub fn state_size_report(config: &ModelConfig, seq_len: usize, batch: usize) -> StateSizeReport {
    let mu = &config.mu;
    let (n, w, r) = (mu.locations, mu.width, mu.read_heads);
    let (mut state, mut preact) = controller_floats(&config.controller);
    if let Some(bw) = &config.backward_controller {
        let (s, p) = controller_floats(bw);
        state += s;
        preact += p;
    }
    let base = MuVariant::Cbmu;
    let dnc = MuVariant::Dnc;
    let interface_cbmu = crate::memory::MuConfig::new(n, w, r, base).interface_len();
    let interface_dnc = crate::memory::MuConfig::new(n, w, r, dnc).interface_len();

    let shared = n * w + n + n + r * n + r * w + state + preact;
    let per_step_dnc = shared + n * n + n + interface_dnc;
    let per_step_cbmu = shared + interface_cbmu;
    StateSizeReport {
        memory_matrix: n * w,
        linkage: n * n,
        precedence: n,
        usage: n,
        write_weighting: n,
        read_weightings: r * n,
        read_vectors: r * w,
        controller_state: state,
        controller_preactivations: preact,
        interface_dnc,
        interface_cbmu,
        per_step_dnc,
        per_step_cbmu,
        seq_len,
        batch,
        total_dnc: per_step_dnc * seq_len * batch,
        total_cbmu: per_step_cbmu * seq_len * batch,
        reduction: 1.0 - per_step_cbmu as f64 / per_step_dnc as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Json,
}

pub fn trace_csv_header(heads: usize) -> String {
    let mut cols = vec!["t".to_string(), "token".to_string()];
    cols.extend((1..=heads).map(|i| format!("free_g_{i}")));
    cols.push("alloc_g".into());
    cols.push("write_g".into());
    for tag in ["mode_b", "mode_c", "mode_f"] {
        cols.extend((1..=heads).map(|i| format!("{tag}_{i}")));
    }
    cols.push("influence_pct".into());
    cols.push("is_answer".into());
    cols.join(",")
}

pub fn export_traces(traces: &[StepTrace], path: &Path, format: TraceFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        TraceFormat::Json => {
            serde_json::to_writer_pretty(&mut w, traces)?;
            w.write_all(b"\n")?;
        }
        TraceFormat::Csv => {
            let heads = traces.first().map_or(0, |t| t.free_gates.len());
            writeln!(w, "{}", trace_csv_header(heads))?;
            for t in traces {
                let join = |v: &[f64]| {
                    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    t.t,
                    t.token,
                    join(&t.free_gates),
                    t.alloc_gate,
                    t.write_gate,
                    join(&t.mode_backward),
                    join(&t.mode_content),
                    join(&t.mode_forward),
                    t.influence_pct,
                    t.is_answer as u8
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn import_traces_json(path: &Path) -> Result<Vec<StepTrace>> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Row count of an exported CSV, header excluded; a cheap well-formedness
/// probe for tests and the command line.
pub fn csv_row_count(path: &Path) -> Result<usize> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    match lines.next() {
        Some(first) => {
            let first = first?;
            if !first.starts_with("t,token,") {
                return Err(CoreError::Parse {
                    line: 1,
                    message: "missing trace header".into(),
                });
            }
        }
        None => return Ok(0),
    }
    let mut n = 0;
    for l in lines {
        l?;
        n += 1;
    }
    Ok(n)
}
