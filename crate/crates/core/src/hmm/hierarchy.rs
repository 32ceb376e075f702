use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::em::state_log_densities;
use super::gaussian::{Conditioner, GaussianState, DEFAULT_COND_FLOOR};
use crate::error::{Error, Result};
use crate::motion::Skeleton;
use crate::segmentation::GaitPhase;

/// Frame-chain transition probabilities.
pub const CHAIN_SELF: f64 = 1.0 / 3.0;
pub const CHAIN_NEXT: f64 = 1.0 / 3.0;
pub const CHAIN_SKIP: f64 = 1.0 / 3.0;
/// Split of the mass leaving a chain's end.
pub const PHASE_SELF: f64 = 1.0 / 3.0;
pub const PHASE_NEXT: f64 = 1.0 / 3.0;
pub const PHASE_EXIT: f64 = 1.0 / 3.0;

pub const MODEL_VERSION: u32 = 1;

/// Per-channel standardization of joint feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    /// Statistics over all frames; channels with (near) zero spread keep
    /// unit scale.
    pub fn fit<'a>(frames: impl Iterator<Item = &'a Vec<f64>> + Clone) -> Result<Self> {
        let mut count = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        for f in frames.clone() {
            if mean.is_empty() {
                mean = vec![0.0; f.len()];
            }
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data("no frames to standardize".into()));
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; mean.len()];
        for f in frames {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 1e-9 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, z: &[f64], offset: usize) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[offset + i]) / self.std[offset + i])
            .collect()
    }

    pub fn undo(&self, z: &[f64], offset: usize) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[offset + i] + self.mean[offset + i])
            .collect()
    }
}

/// Left-to-right chain whose state `k` is frame `k` of one registered
/// segment. Means are standardized joint vectors; sigmas cover the sensor
/// channels only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameChain {
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<Vec<f64>>,
    pub src_segment_id: usize,
    /// Absolute root height of every frame, meters.
    pub root_heights: Vec<f64>,
}

impl FrameChain {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Per-frame mean and sensor spread over all chains of a phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile {
    pub mean: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    pub family: String,
    pub phase: GaitPhase,
    /// Index of the successor phase in the model, when trained.
    pub successor: Option<usize>,
    pub chains: Vec<FrameChain>,
    pub profile: PhaseProfile,
}

/// Registered, standardized training material of one phase.
#[derive(Debug, Clone)]
pub struct PhaseGroup {
    pub family: String,
    pub phase: GaitPhase,
    /// Standardized joint vectors per member and frame; equal lengths.
    pub members: Vec<Vec<Vec<f64>>>,
    pub root_heights: Vec<Vec<f64>>,
    pub src_segment_ids: Vec<usize>,
}

/// Address of one frame state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainRef {
    pub phase: usize,
    pub chain: usize,
    pub frame: usize,
}

/// Derived lookup tables, rebuilt whenever a model is built or loaded.
#[derive(Debug, Clone, Default)]
pub(crate) struct Cache {
    /// First flat state index of every chain, per phase.
    pub chain_offsets: Vec<Vec<usize>>,
    /// Flat state range of every phase.
    pub phase_ranges: Vec<(usize, usize)>,
    pub refs: Vec<ChainRef>,
    /// Flat sensor means, `dy` per state.
    pub y_mean: Vec<f64>,
    /// Flat reciprocal sensor sigmas.
    pub y_inv_sigma: Vec<f64>,
    /// `-sum(ln sigma) - dy/2 ln(2 pi)` per state.
    pub log_norm: Vec<f64>,
    /// Global Gaussian state each frame state regresses with.
    pub assignment: Vec<usize>,
    pub conditioners: Vec<Conditioner>,
    /// Phases whose successor is each phase.
    pub predecessors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct HierarchicalModel {
    pub skeleton: Skeleton,
    pub fps: f64,
    pub k: usize,
    pub w: usize,
    pub dx: usize,
    pub dy: usize,
    pub zscore: ZScore,
    pub phases: Vec<PhaseModel>,
    pub global_states: Vec<GaussianState>,
    pub(crate) cache: Cache,
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Assembles the two-level model: one chain per registered segment, sensor
/// sigmas estimated across each phase's aligned members and floored at
/// `sigma_floor`, and the successor map from the gait-phase order.
#[allow(clippy::too_many_arguments)]
pub fn build_hierarchy(
    skeleton: Skeleton,
    fps: f64,
    mut groups: Vec<PhaseGroup>,
    global_states: Vec<GaussianState>,
    zscore: ZScore,
    dx: usize,
    k: usize,
    w: usize,
    sigma_floor: f64,
) -> Result<HierarchicalModel> {
    if k == 0 || w == 0 {
        return Err(Error::Config("K and W must be at least 1".into()));
    }
    if !(sigma_floor > 0.0) {
        return Err(Error::Config("sigma floor must be positive".into()));
    }
    if groups.is_empty() {
        return Err(Error::Model("no phase groups to build a model from".into()));
    }
    groups.sort_by(|a, b| (&a.family, a.phase.order()).cmp(&(&b.family, b.phase.order())));
    for w in groups.windows(2) {
        if w[0].family == w[1].family && w[0].phase == w[1].phase {
            return Err(Error::Model(format!(
                "phase {} appears twice in family '{}'",
                w[0].phase, w[0].family
            )));
        }
    }
    let d = zscore.mean.len();
    let dy = d
        .checked_sub(dx)
        .filter(|v| *v > 0)
        .ok_or_else(|| Error::Model(format!("dx = {dx} leaves no sensor channels in {d}")))?;
    let mut phases = Vec::with_capacity(groups.len());
    for g in &groups {
        let h = g.members.len();
        let len = g.members.first().map_or(0, |m| m.len());
        if h == 0 || len == 0 {
            return Err(Error::Model(format!("phase {} has no frames", g.phase)));
        }
        if g.members
            .iter()
            .any(|m| m.len() != len || m.iter().any(|f| f.len() != d))
            || g.root_heights.len() != h
            || g.root_heights.iter().any(|r| r.len() != len)
            || g.src_segment_ids.len() != h
        {
            return Err(Error::Model(format!(
                "members of phase {} are not aligned",
                g.phase
            )));
        }
        let sigma: Vec<Vec<f64>> = (0..len)
            .map(|t| {
                (dx..d)
                    .map(|c| {
                        if h == 1 {
                            sigma_floor
                        } else {
                            population_std(g.members.iter().map(|m| m[t][c])).max(sigma_floor)
                        }
                    })
                    .collect()
            })
            .collect();
        let mean: Vec<Vec<f64>> = (0..len)
            .map(|t| {
                (0..d)
                    .map(|c| g.members.iter().map(|m| m[t][c]).sum::<f64>() / h as f64)
                    .collect()
            })
            .collect();
        let chains = g
            .members
            .iter()
            .zip(&g.root_heights)
            .zip(&g.src_segment_ids)
            .map(|((m, r), id)| FrameChain {
                means: m.clone(),
                sigmas: sigma.clone(),
                src_segment_id: *id,
                root_heights: r.clone(),
            })
            .collect();
        phases.push(PhaseModel {
            family: g.family.clone(),
            phase: g.phase,
            successor: None,
            chains,
            profile: PhaseProfile { mean, sigma },
        });
    }
    link_successors(&mut phases);
    HierarchicalModel::assemble(skeleton, fps, k, w, dx, dy, zscore, phases, global_states)
}

fn link_successors(phases: &mut [PhaseModel]) {
    let keys: Vec<(String, GaitPhase)> = phases.iter().map(|p| (p.family.clone(), p.phase)).collect();
    for p in phases.iter_mut() {
        let next = p.phase.successor();
        p.successor = keys.iter().position(|(f, ph)| *f == p.family && *ph == next);
    }
}

impl HierarchicalModel {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        skeleton: Skeleton,
        fps: f64,
        k: usize,
        w: usize,
        dx: usize,
        dy: usize,
        zscore: ZScore,
        phases: Vec<PhaseModel>,
        global_states: Vec<GaussianState>,
    ) -> Result<Self> {
        if global_states.is_empty() {
            return Err(Error::Model("model has no global Gaussian states".into()));
        }
        if global_states.iter().any(|g| g.dim() != dx + dy || g.dx != dx) {
            return Err(Error::Model("global states do not match feature layout".into()));
        }
        if zscore.std.len() != dx + dy || zscore.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Model("invalid standardization statistics".into()));
        }
        let mut model = Self {
            skeleton,
            fps,
            k,
            w,
            dx,
            dy,
            zscore,
            phases,
            global_states,
            cache: Cache::default(),
        };
        model.rebuild_cache()?;
        Ok(model)
    }

    fn rebuild_cache(&mut self) -> Result<()> {
        let (dx, dy) = (self.dx, self.dy);
        let mut c = Cache::default();
        let mut next = 0;
        for (pi, p) in self.phases.iter().enumerate() {
            if p.chains.is_empty() {
                return Err(Error::Model(format!("phase {} has no chains", p.phase)));
            }
            let start = next;
            let mut offs = Vec::new();
            for (ci, ch) in p.chains.iter().enumerate() {
                if ch.is_empty()
                    || ch.sigmas.len() != ch.len()
                    || ch.root_heights.len() != ch.len()
                    || ch.means.iter().any(|m| m.len() != dx + dy)
                    || ch
                        .sigmas
                        .iter()
                        .any(|s| s.len() != dy || s.iter().any(|v| !(*v > 0.0)))
                {
                    return Err(Error::Model(format!(
                        "chain {ci} of phase {} is malformed",
                        p.phase
                    )));
                }
                offs.push(next);
                for (f, (m, s)) in ch.means.iter().zip(&ch.sigmas).enumerate() {
                    c.refs.push(ChainRef {
                        phase: pi,
                        chain: ci,
                        frame: f,
                    });
                    c.y_mean.extend_from_slice(&m[dx..]);
                    c.y_inv_sigma.extend(s.iter().map(|v| 1.0 / v));
                    c.log_norm.push(
                        -s.iter().map(|v| v.ln()).sum::<f64>()
                            - 0.5 * dy as f64 * (2.0 * std::f64::consts::PI).ln(),
                    );
                }
                next += ch.len();
            }
            c.chain_offsets.push(offs);
            c.phase_ranges.push((start, next));
        }
        c.predecessors = vec![Vec::new(); self.phases.len()];
        for (i, p) in self.phases.iter().enumerate() {
            if let Some(s) = p.successor {
                if s >= self.phases.len() {
                    return Err(Error::Model(format!("successor index {s} out of range")));
                }
                c.predecessors[s].push(i);
            }
        }
        c.conditioners = self
            .global_states
            .iter()
            .map(|g| Conditioner::new(g, DEFAULT_COND_FLOOR))
            .collect::<Result<_>>()?;
        // regression state of each frame: the most likely global state
        let n = c.refs.len();
        let d = dx + dy;
        let data = DMatrix::from_iterator(
            d,
            n,
            self.phases
                .iter()
                .flat_map(|p| p.chains.iter().flat_map(|ch| ch.means.iter().flatten().copied())),
        );
        let dens: Vec<Vec<f64>> = self
            .global_states
            .par_iter()
            .enumerate()
            .map(|(i, g)| state_log_densities(g, &data, i))
            .collect::<Result<_>>()?;
        c.assignment = (0..n)
            .map(|s| {
                let mut best = 0;
                for g in 1..dens.len() {
                    if dens[g][s] > dens[best][s] {
                        best = g;
                    }
                }
                best
            })
            .collect();
        self.cache = c;
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.cache.refs.len()
    }

    pub fn state_ref(&self, state: usize) -> ChainRef {
        self.cache.refs[state]
    }

    pub fn state_index(&self, r: ChainRef) -> usize {
        self.cache.chain_offsets[r.phase][r.chain] + r.frame
    }

    pub fn phase_range(&self, phase: usize) -> (usize, usize) {
        self.cache.phase_ranges[phase]
    }

    pub fn chain_offset(&self, phase: usize, chain: usize) -> usize {
        self.cache.chain_offsets[phase][chain]
    }

    pub(crate) fn predecessors(&self, phase: usize) -> &[usize] {
        &self.cache.predecessors[phase]
    }

    pub fn chain(&self, r: ChainRef) -> &FrameChain {
        &self.phases[r.phase].chains[r.chain]
    }

    /// Global Gaussian state used to regress from frame state `state`.
    pub fn assignment(&self, state: usize) -> usize {
        self.cache.assignment[state]
    }

    pub fn conditioner(&self, global: usize) -> &Conditioner {
        &self.cache.conditioners[global]
    }

    /// Total number of chains (registered segments) in the model.
    pub fn segment_count(&self) -> usize {
        self.phases.iter().map(|p| p.chains.len()).sum()
    }

    /// Diagonal-Gaussian log emission of standardized sensor vector `y` in
    /// every frame state, written into `out`.
    pub fn emission_log_densities_into(&self, y: &[f64], out: &mut [f64]) {
        let dy = self.dy;
        let means = self.cache.y_mean.chunks_exact(dy);
        let inv = self.cache.y_inv_sigma.chunks_exact(dy);
        for (((o, m), s), ln) in out.iter_mut().zip(means).zip(inv).zip(&self.cache.log_norm) {
            let mut q = 0.0;
            for i in 0..dy {
                let r = (y[i] - m[i]) * s[i];
                q += r * r;
            }
            *o = ln - 0.5 * q;
        }
    }

    pub fn emission_log_densities(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states()];
        self.emission_log_densities_into(y, &mut out);
        out
    }

    /// Initial state distribution: uniform over phases, then over each
    /// phase's chains, on the chains' first frames.
    pub fn initial_distribution(&self) -> Vec<f64> {
        let mut pi = vec![0.0; self.n_states()];
        let p = self.phases.len() as f64;
        for (pi_idx, ph) in self.phases.iter().enumerate() {
            for c in 0..ph.chains.len() {
                pi[self.chain_offset(pi_idx, c)] = 1.0 / p / ph.chains.len() as f64;
            }
        }
        pi
    }

    /// Outgoing transitions of one frame state as `(target, probability)`;
    /// targets may repeat.
    ///
    /// Inside a chain a state moves to itself, the next frame or the frame
    /// after that. Moves past the chain end leave the chain; that mass is
    /// split between restarting the same phase, entering the successor
    /// phase and restarting anywhere, each spread evenly over the target
    /// chains' first frames. Without a successor the "next" share joins the
    /// restart-anywhere share.
    pub fn transition_row(&self, state: usize) -> Vec<(usize, f64)> {
        let r = self.state_ref(state);
        let len = self.chain(r).len();
        let mut row = vec![(state, CHAIN_SELF)];
        let mut leave = 0.0;
        for (step, p) in [(1, CHAIN_NEXT), (2, CHAIN_SKIP)] {
            if r.frame + step < len {
                row.push((state + step, p));
            } else {
                leave += p;
            }
        }
        if leave > 0.0 {
            let spread = |row: &mut Vec<(usize, f64)>, phase: usize, mass: f64| {
                let h = self.phases[phase].chains.len();
                for c in 0..h {
                    row.push((self.chain_offset(phase, c), mass / h as f64));
                }
            };
            spread(&mut row, r.phase, leave * PHASE_SELF);
            let mut exit = leave * PHASE_EXIT;
            match self.phases[r.phase].successor {
                Some(s) => spread(&mut row, s, leave * PHASE_NEXT),
                None => exit += leave * PHASE_NEXT,
            }
            let p = self.phases.len();
            for q in 0..p {
                spread(&mut row, q, exit / p as f64);
            }
        }
        row
    }

    /// Dense transition matrix assembled from [`Self::transition_row`].
    pub fn dense_transitions(&self) -> Vec<Vec<f64>> {
        let n = self.n_states();
        (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                for (j, p) in self.transition_row(i) {
                    row[j] += p;
                }
                row
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_VERSION,
            skeleton: serde_json::from_str(&self.skeleton.to_json_string())
                .map_err(|e| Error::Model(e.to_string()))?,
            fps: self.fps,
            k: self.k,
            w: self.w,
            dx: self.dx,
            dy: self.dy,
            zscore: self.zscore.clone(),
            phases: self
                .phases
                .iter()
                .map(|p| PhaseRecord {
                    family: p.family.clone(),
                    phase: p.phase,
                    successor: p.successor.map(|s| self.phases[s].phase),
                    chains: p.chains.clone(),
                    profile: p.profile.clone(),
                })
                .collect(),
            global_states: self
                .global_states
                .iter()
                .map(|g| StateRecord {
                    mu: g.mean.as_slice().to_vec(),
                    u: g.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
        };
        let mut out = serde_json::to_string(&file).map_err(|e| Error::Model(e.to_string()))?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: Default::default(),
            line: e.line() as u64,
            msg: e.to_string(),
        })?;
        if file.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let skeleton = Skeleton::from_json_str(&file.skeleton.to_string())?;
        let d = file.dx + file.dy;
        let mut global = Vec::with_capacity(file.global_states.len());
        for s in file.global_states {
            if s.mu.len() != d || s.u.len() != d || s.u.iter().any(|r| r.len() != d) {
                return Err(Error::Model("global state has wrong dimension".into()));
            }
            let cov = DMatrix::from_row_iterator(d, d, s.u.into_iter().flatten());
            global.push(GaussianState::new(DVector::from_vec(s.mu), cov, file.dx)?);
        }
        let mut phases: Vec<PhaseModel> = file
            .phases
            .into_iter()
            .map(|p| PhaseModel {
                family: p.family,
                phase: p.phase,
                successor: None,
                chains: p.chains,
                profile: p.profile,
            })
            .collect();
        link_successors(&mut phases);
        Self::assemble(
            skeleton,
            file.fps,
            file.k,
            file.w,
            file.dx,
            file.dy,
            file.zscore,
            phases,
            global,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    skeleton: serde_json::Value,
    fps: f64,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "W")]
    w: usize,
    dx: usize,
    dy: usize,
    zscore: ZScore,
    phases: Vec<PhaseRecord>,
    global_states: Vec<StateRecord>,
}

#[derive(Serialize, Deserialize)]
struct PhaseRecord {
    family: String,
    phase: GaitPhase,
    successor: Option<GaitPhase>,
    chains: Vec<FrameChain>,
    profile: PhaseProfile,
}

#[derive(Serialize, Deserialize)]
struct StateRecord {
    mu: Vec<f64>,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
}
