//! End-to-end training: features, segmentation, registration, EM and the
//! hierarchical model.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hmm::{build_hierarchy, em_fit, EmConfig, HierarchicalModel, PhaseGroup, ZScore};
use crate::motion::features::to_heading_frame;
use crate::motion::{extract_features_multi, ImuStream, JointObservation, MotionClip};
use crate::registration::register_group;
use crate::segmentation::{segment_auto, GaitPhase, PhaseSegment, SegmentParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Frames per second every input must have.
    pub fps: f64,
    /// Chains blended per output frame.
    pub k: usize,
    /// Observation window, frames.
    pub w: usize,
    pub segment: SegmentParams,
    pub em: EmConfig,
    /// Lower bound of per-frame sensor sigmas, in standardized units.
    pub sigma_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            k: 5,
            w: 3,
            segment: SegmentParams::default(),
            em: EmConfig::default(),
            sigma_floor: 0.1,
        }
    }
}

/// One motion clip with its simultaneous sensor streams. Clips of the same
/// `family` share phase models.
#[derive(Debug, Clone)]
pub struct TrainingClip {
    pub motion: MotionClip,
    pub imus: Vec<ImuStream>,
    pub family: String,
}

impl TrainingClip {
    pub fn new(motion: MotionClip, imus: Vec<ImuStream>) -> Self {
        Self {
            motion,
            imus,
            family: "default".into(),
        }
    }

    pub fn family(mut self, family: &str) -> Self {
        self.family = family.to_string();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Segments per `(family, phase)`.
    pub phase_counts: Vec<(String, GaitPhase, usize)>,
    pub segments: usize,
    pub frames: usize,
    pub em_iterations: usize,
    pub final_log_likelihood: f64,
}

/// Sensor-paired body features with the root heading removed.
pub fn heading_observations(clip: &TrainingClip) -> Result<Vec<JointObservation>> {
    let root = clip.motion.skeleton.root();
    let mut obs = extract_features_multi(&clip.motion, &clip.imus)?;
    for o in &mut obs {
        o.x = to_heading_frame(&o.x, root).0;
    }
    Ok(obs)
}

pub fn train(clips: &[TrainingClip], config: &TrainConfig) -> Result<(HierarchicalModel, TrainReport)> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Data("no training clips given".into()))?;
    let skeleton = first.motion.skeleton.clone();
    if config.k == 0 || config.w == 0 {
        return Err(Error::Config("K and W must be at least 1".into()));
    }
    for (i, c) in clips.iter().enumerate() {
        if c.motion.skeleton.joints() != skeleton.joints() {
            return Err(Error::Skeleton(format!("clip {i} uses a different skeleton")));
        }
        if (c.motion.fps - config.fps).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "clip {i} is at {} fps, training expects {}",
                c.motion.fps, config.fps
            )));
        }
    }

    // extract and segment
    let mut all_obs = Vec::with_capacity(clips.len());
    let mut groups: BTreeMap<(String, usize), Vec<PhaseSegment>> = BTreeMap::new();
    let mut segment_ids: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    let mut next_id = 0;
    for (i, clip) in clips.iter().enumerate() {
        let obs = heading_observations(clip).map_err(|e| stage_error("extract", i, e))?;
        let segs =
            segment_auto(&clip.motion, &obs, &config.segment).map_err(|e| stage_error("segment", i, e))?;
        log::info!("clip {i}: {} frames, {} segments", clip.motion.len(), segs.len());
        for s in segs {
            let key = (clip.family.clone(), s.phase.order());
            groups.entry(key.clone()).or_default().push(s);
            segment_ids.entry(key).or_default().push(next_id);
            next_id += 1;
        }
        all_obs.push(obs);
    }

    // register every phase group
    let keys: Vec<(String, usize)> = groups.keys().cloned().collect();
    let registered = groups
        .into_par_iter()
        .map(|(key, segs)| register_group(&skeleton, segs).map(|g| (key, g)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| stage_error("register", 0, e))?;

    // standardize and fit the global joint model
    let sequences: Vec<Vec<Vec<f64>>> = all_obs
        .iter()
        .map(|o| o.iter().map(|f| f.z()).collect())
        .collect();
    let zscore = ZScore::fit(sequences.iter().flatten())?;
    let standardized: Vec<Vec<Vec<f64>>> = sequences
        .iter()
        .map(|s| s.iter().map(|z| zscore.apply(z, 0)).collect())
        .collect();
    let dx = first_dx(&all_obs)?;
    let mut em = config.em;
    let distinct = distinct_frames(&standardized, em.n_states);
    if distinct < em.n_states {
        log::info!("only {distinct} distinct frames; fitting {distinct} global states");
        em.n_states = distinct;
    }
    let fit = em_fit(&standardized, dx, &em).map_err(|e| stage_error("em", 0, e))?;
    log::info!(
        "EM: {} iterations, log-likelihood {}",
        fit.log_likelihoods.len(),
        fit.final_log_likelihood()
    );

    let mut phase_counts = Vec::new();
    let mut phase_groups = Vec::new();
    for ((key, group), k2) in registered.into_iter().zip(&keys) {
        debug_assert_eq!(&key, k2);
        let ids = segment_ids.remove(&key).unwrap_or_default();
        phase_counts.push((key.0.clone(), group.phase, group.members.len()));
        phase_groups.push(PhaseGroup {
            family: key.0.clone(),
            phase: group.phase,
            members: group
                .members
                .iter()
                .map(|m| m.observations.iter().map(|o| zscore.apply(&o.z(), 0)).collect())
                .collect(),
            root_heights: group
                .members
                .iter()
                .map(|m| m.poses.iter().map(|p| p.root_position.y).collect())
                .collect(),
            src_segment_ids: ids,
        });
    }
    let model = build_hierarchy(
        (*skeleton).clone(),
        config.fps,
        phase_groups,
        fit.params.states.clone(),
        zscore,
        dx,
        config.k,
        config.w,
        config.sigma_floor,
    )
    .map_err(|e| stage_error("build", 0, e))?;
    let report = TrainReport {
        phase_counts,
        segments: next_id,
        frames: clips.iter().map(|c| c.motion.len()).sum(),
        em_iterations: fit.log_likelihoods.len(),
        final_log_likelihood: fit.final_log_likelihood(),
    };
    Ok((model, report))
}

/// Number of distinct frames, counting no further than `cap`.
fn distinct_frames(sequences: &[Vec<Vec<f64>>], cap: usize) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for f in sequences.iter().flatten() {
        if !seen.contains(&f) {
            seen.push(f);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

fn first_dx(obs: &[Vec<JointObservation>]) -> Result<usize> {
    obs.iter()
        .flatten()
        .next()
        .map(|o| o.x.dim())
        .ok_or_else(|| Error::Data("training clips contain no frames".into()))
}

/// Prefixes an error message with the pipeline stage and clip.
fn stage_error(stage: &str, clip: usize, e: Error) -> Error {
    match e {
        Error::Segmentation { start, end, msg } => Error::Segmentation {
            start,
            end,
            msg: format!("{stage} (clip {clip}): {msg}"),
        },
        Error::Data(m) => Error::Data(format!("{stage} (clip {clip}): {m}")),
        Error::Alignment(m) => Error::Alignment(format!("{stage} (clip {clip}): {m}")),
        Error::Model(m) => Error::Model(format!("{stage}: {m}")),
        Error::Singular { state, msg } => Error::Singular {
            state,
            msg: format!("{stage}: {msg}"),
        },
        other => other,
    }
}
