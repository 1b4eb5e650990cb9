//! Prediction-error analyses over a frozen model: per-clip totals against a
//! musicality ranking, error as a function of time since a note change,
//! error against interval size, and the group difference across a melody.

mod pipeline;
mod stats;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;

pub use pipeline::{
    analyze, per_sequence_rows, write_curve_csv, write_report, AnalysisOptions, AnalysisReport, Regressor, StimulusData, Which,
};
pub use stats::{
    average_ranks, ln_gamma, ols_regress, regularized_incomplete_beta, sign_test, spearman_rho, student_t_cdf,
    two_sided_p, RegressionResult, SignTest,
};

use crate::dsp::{extract_frames, MelSpectrogram, NOMINAL_COLUMN_MS};
use crate::error::{Error, Result};
use crate::model::{pixel_mse, PredNetModel};
use crate::stimuli::Transition;

/// Anything that forecasts frame `k + 1` from frames `0..=k`.
pub trait Predictor: Sync {
    /// `out[k]` is the forecast of `frames[k + 1]`.
    fn predictions(&self, frames: &[&[f32]]) -> Result<Vec<Vec<f32>>>;
}

impl Predictor for PredNetModel<f32> {
    fn predictions(&self, frames: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        Ok(self.forward_sequence(frames)?.predictions)
    }
}

/// Baseline that repeats the last seen frame.
pub struct CopyLastFrame;

impl Predictor for CopyLastFrame {
    fn predictions(&self, frames: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        if frames.len() < 2 {
            return Err(Error::InvalidInput("sequence needs at least 2 frames".into()));
        }
        Ok(frames[..frames.len() - 1].iter().map(|f| f.to_vec()).collect())
    }
}

/// Pixel MSE of every forecast; `out[k]` scores the forecast of frame `k + 1`.
pub fn step_errors(predictor: &impl Predictor, frames: &[&[f32]]) -> Result<Vec<f64>> {
    let preds = predictor.predictions(frames)?;
    preds
        .iter()
        .zip(&frames[1..])
        .map(|(p, t)| pixel_mse(p, t))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusEvaluation {
    pub id: String,
    pub hop_columns: usize,
    pub frame_width: usize,
    /// `step_mse[k]` scores the forecast of frame `k + 1`.
    pub step_mse: Vec<f64>,
}

impl StimulusEvaluation {
    pub fn total(&self) -> f64 {
        self.step_mse.iter().sum()
    }

    /// Error of the forecast whose target is frame `j` (`j >= 1`).
    pub fn target_frame_mse(&self, j: usize) -> Option<f64> {
        j.checked_sub(1).and_then(|k| self.step_mse.get(k).copied())
    }

    pub fn num_frames(&self) -> usize {
        self.step_mse.len() + 1
    }
}

pub fn evaluate_spectrogram(predictor: &impl Predictor, spec: &MelSpectrogram, hop_columns: usize) -> Result<StimulusEvaluation> {
    let frames = extract_frames(spec, hop_columns)?;
    if frames.len() < 2 {
        return Err(Error::SpectrogramTooNarrow {
            cols: spec.cols,
            min: frames.width + hop_columns,
        });
    }
    Ok(StimulusEvaluation {
        id: spec.clip_id.clone(),
        hop_columns,
        frame_width: frames.width,
        step_mse: step_errors(predictor, &frames.frame_refs())?,
    })
}

/// Sum of per-step pixel MSE over a whole clip.
pub fn total_error(predictor: &impl Predictor, spec: &MelSpectrogram, hop_columns: usize) -> Result<f64> {
    Ok(evaluate_spectrogram(predictor, spec, hop_columns)?.total())
}

/// Evaluate many clips; results keep the input order.
pub fn evaluate_set(predictor: &impl Predictor, specs: &[MelSpectrogram], hop_columns: usize) -> Result<Vec<StimulusEvaluation>> {
    specs
        .par_iter()
        .map(|s| evaluate_spectrogram(predictor, s, hop_columns))
        .collect()
}

/// Milliseconds shown for a time lapse of `x` columns.
pub fn timelapse_ms(x: usize) -> f64 {
    x as f64 * NOMINAL_COLUMN_MS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Musical,
    NonMusical,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Musical => "musical",
            Group::NonMusical => "non-musical",
        })
    }
}

/// The `size` highest-ranked (musical) and lowest-ranked (non-musical) clips.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Groups {
    pub musical: BTreeSet<String>,
    pub non_musical: BTreeSet<String>,
}

impl Groups {
    /// `ranking` maps id to rank, rank N = most musical.
    pub fn from_ranking(ranking: &BTreeMap<String, usize>, size: usize) -> Result<Self> {
        validate_ranking(ranking)?;
        let n = ranking.len();
        if 2 * size > n {
            return Err(Error::InvalidInput(format!(
                "cannot form two groups of {size} from {n} ranked clips"
            )));
        }
        let mut g = Groups::default();
        for (id, &r) in ranking {
            if r > n - size {
                g.musical.insert(id.clone());
            } else if r <= size {
                g.non_musical.insert(id.clone());
            }
        }
        Ok(g)
    }

    pub fn of(&self, id: &str) -> Option<Group> {
        if self.musical.contains(id) {
            Some(Group::Musical)
        } else if self.non_musical.contains(id) {
            Some(Group::NonMusical)
        } else {
            None
        }
    }
}

fn validate_ranking(ranking: &BTreeMap<String, usize>) -> Result<()> {
    let n = ranking.len();
    let ranks: BTreeSet<usize> = ranking.values().copied().collect();
    if ranks.len() != n || ranks.iter().next() != Some(&1) || ranks.iter().next_back() != Some(&n) {
        return Err(Error::InvalidInput(format!(
            "ranking over {n} clips is not a permutation of 1..={n}"
        )));
    }
    Ok(())
}

/// OLS of total error against rank (rank N = most musical).
pub fn musicality_regression(totals: &[(String, f64)], ranking: &BTreeMap<String, usize>) -> Result<RegressionResult> {
    validate_ranking(ranking)?;
    if totals.len() != ranking.len() {
        return Err(Error::InvalidInput(format!(
            "{} totals for {} ranked clips",
            totals.len(),
            ranking.len()
        )));
    }
    let mut x = Vec::with_capacity(totals.len());
    let mut y = Vec::with_capacity(totals.len());
    for (id, total) in totals {
        let r = ranking
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("clip `{id}` has no rank")))?;
        x.push(*r as f64);
        y.push(*total);
    }
    ols_regress(&x, &y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionError {
    pub sequence_id: String,
    pub transition: usize,
    /// Columns of the new note visible at the end of the target frame.
    pub x: usize,
    pub mse: f64,
}

/// Per-transition error at each time lapse `x` in `xs`.
///
/// The target frame for lapse `x` is the one whose last column is the `x`-th
/// column at or after the onset column; its forecast was made from the frame
/// ending one column earlier. Pairs that would need a frame before the first
/// forecast, past the clip end, or reaching into the next note are skipped.
pub fn error_by_timelapse(
    evals: &[StimulusEvaluation],
    transitions: &[Vec<Transition>],
    xs: impl IntoIterator<Item = usize> + Clone,
) -> Result<Vec<TransitionError>> {
    if evals.len() != transitions.len() {
        return Err(Error::InvalidInput(format!(
            "{} evaluations for {} transition lists",
            evals.len(),
            transitions.len()
        )));
    }
    let mut out = Vec::new();
    for (ev, trs) in evals.iter().zip(transitions) {
        if ev.hop_columns != 1 {
            return Err(Error::InvalidInput(format!(
                "time-lapse analysis needs hop 1, `{}` was evaluated at hop {}",
                ev.id, ev.hop_columns
            )));
        }
        for (i, tr) in trs.iter().enumerate() {
            let next_onset = trs.get(i + 1).map(|n| n.onset_column);
            for x in xs.clone() {
                if x == 0 {
                    return Err(Error::InvalidInput("time lapse starts at 1".into()));
                }
                if next_onset.is_some_and(|next| tr.onset_column + x > next) {
                    continue;
                }
                let last_col = tr.onset_column + x - 1;
                let Some(j) = (last_col + 1).checked_sub(ev.frame_width) else {
                    log::debug!("{} transition {} x={x}: before first frame", ev.id, tr.index);
                    continue;
                };
                match ev.target_frame_mse(j) {
                    Some(mse) => out.push(TransitionError {
                        sequence_id: ev.id.clone(),
                        transition: tr.index,
                        x,
                        mse,
                    }),
                    None => log::debug!("{} transition {} x={x}: outside clip", ev.id, tr.index),
                }
            }
        }
    }
    Ok(out)
}

fn transition_lookup(transitions: &[Vec<Transition>]) -> HashMap<(&str, usize), &Transition> {
    transitions
        .iter()
        .flatten()
        .map(|t| ((t.sequence_id.as_str(), t.index), t))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexMean {
    pub x: usize,
    pub index: usize,
    pub mean_mse: f64,
    pub mean_interval_bands: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCurve {
    pub group: Group,
    /// `(x, mean mse, count)`, averaged over transitions.
    pub per_x: Vec<(usize, f64, usize)>,
    pub per_index: Vec<IndexMean>,
}

pub fn group_curves(errors: &[TransitionError], transitions: &[Vec<Transition>], groups: &Groups) -> Result<Vec<GroupCurve>> {
    let lookup = transition_lookup(transitions);
    let mut curves = Vec::new();
    for group in [Group::Musical, Group::NonMusical] {
        let mut per_x: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        let mut per_index: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
        for e in errors.iter().filter(|e| groups.of(&e.sequence_id) == Some(group)) {
            let tr = lookup.get(&(e.sequence_id.as_str(), e.transition)).ok_or_else(|| {
                Error::InvalidInput(format!("no transition {} for `{}`", e.transition, e.sequence_id))
            })?;
            let px = per_x.entry(e.x).or_default();
            px.0 += e.mse;
            px.1 += 1;
            let pi = per_index.entry((e.x, e.transition)).or_default();
            pi.0 += e.mse;
            pi.1 += tr.interval_bands as f64;
            pi.2 += 1;
        }
        curves.push(GroupCurve {
            group,
            per_x: per_x.into_iter().map(|(x, (s, n))| (x, s / n as f64, n)).collect(),
            per_index: per_index
                .into_iter()
                .map(|((x, index), (s, b, n))| IndexMean {
                    x,
                    index,
                    mean_mse: s / n as f64,
                    mean_interval_bands: b / n as f64,
                    n,
                })
                .collect(),
        });
    }
    Ok(curves)
}

/// OLS of error against interval size (mel bands) at lapse `x`.
pub fn interval_regression(errors: &[TransitionError], transitions: &[Vec<Transition>], x: usize) -> Result<RegressionResult> {
    let (xs, ys) = interval_points(errors, transitions, x)?;
    ols_regress(&xs, &ys)
}

/// `(interval_bands, mse)` pairs at lapse `x`.
pub fn interval_points(errors: &[TransitionError], transitions: &[Vec<Transition>], x: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let lookup = transition_lookup(transitions);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for e in errors.iter().filter(|e| e.x == x) {
        let tr = lookup.get(&(e.sequence_id.as_str(), e.transition)).ok_or_else(|| {
            Error::InvalidInput(format!("no transition {} for `{}`", e.transition, e.sequence_id))
        })?;
        xs.push(tr.interval_bands as f64);
        ys.push(e.mse);
    }
    Ok((xs, ys))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextRow {
    pub k: usize,
    pub norm_musical: f64,
    pub norm_nonmusical: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEffect {
    pub x: usize,
    pub rows: Vec<ContextRow>,
    /// Transition indices left out (no data, or zero mean interval in a group).
    pub excluded: Vec<usize>,
    /// OLS of `diff` against `k`; `None` with fewer than 3 usable indices.
    pub regression: Option<RegressionResult>,
}

/// Mean error divided by mean interval size at one transition index.
pub fn normalized_error(mean_mse: f64, mean_interval_bands: f64) -> Option<f64> {
    (mean_interval_bands != 0.0).then(|| mean_mse / mean_interval_bands)
}

/// Group difference of interval-normalised error at each transition index.
pub fn context_effect(
    errors: &[TransitionError],
    transitions: &[Vec<Transition>],
    groups: &Groups,
    x: usize,
    num_transitions: usize,
) -> Result<ContextEffect> {
    if groups.musical.is_empty() || groups.non_musical.is_empty() {
        return Err(Error::InvalidInput("both groups must be non-empty".into()));
    }
    let curves = group_curves(errors, transitions, groups)?;
    let at = |g: Group, k: usize| {
        curves
            .iter()
            .find(|c| c.group == g)
            .and_then(|c| c.per_index.iter().find(|m| m.x == x && m.index == k))
            .and_then(|m| normalized_error(m.mean_mse, m.mean_interval_bands))
    };
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for k in 1..=num_transitions {
        match (at(Group::Musical, k), at(Group::NonMusical, k)) {
            (Some(m), Some(nm)) => rows.push(ContextRow {
                k,
                norm_musical: m,
                norm_nonmusical: nm,
                diff: nm - m,
            }),
            _ => {
                log::info!("context effect: transition index {k} excluded at x={x}");
                excluded.push(k);
            }
        }
    }
    let regression = if rows.len() >= 3 {
        let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
        let ds: Vec<f64> = rows.iter().map(|r| r.diff).collect();
        Some(ols_regress(&ks, &ds)?)
    } else {
        None
    };
    Ok(ContextEffect {
        x,
        rows,
        excluded,
        regression,
    })
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn write_per_sequence_csv(path: &Path, rows: &[(String, f64, usize)]) -> Result<()> {
    let bytes = csv_bytes(
        &["stimulus_id", "total_mse", "rank"],
        rows.iter().map(|(id, t, r)| vec![id.clone(), t.to_string(), r.to_string()]),
    )?;
    crate::atomic_write(path, &bytes)
}

pub fn write_timelapse_csv(path: &Path, errors: &[TransitionError], groups: &Groups) -> Result<()> {
    let bytes = csv_bytes(
        &["stimulus_id", "transition", "x", "mse", "group"],
        errors.iter().map(|e| {
            vec![
                e.sequence_id.clone(),
                e.transition.to_string(),
                e.x.to_string(),
                e.mse.to_string(),
                groups.of(&e.sequence_id).map(|g| g.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    crate::atomic_write(path, &bytes)
}

pub fn write_interval_csv(path: &Path, errors: &[TransitionError], transitions: &[Vec<Transition>], xs: &[usize]) -> Result<()> {
    let lookup = transition_lookup(transitions);
    let mut rows = Vec::new();
    for e in errors.iter().filter(|e| xs.contains(&e.x)) {
        let tr = lookup
            .get(&(e.sequence_id.as_str(), e.transition))
            .ok_or_else(|| Error::InvalidInput(format!("no transition {} for `{}`", e.transition, e.sequence_id)))?;
        rows.push(vec![
            format!("{}#{}", e.sequence_id, e.transition),
            e.x.to_string(),
            tr.interval_bands.to_string(),
            e.mse.to_string(),
        ]);
    }
    let bytes = csv_bytes(&["transition_key", "x", "interval_bands", "mse"], rows)?;
    crate::atomic_write(path, &bytes)
}

pub fn write_context_csv(path: &Path, effect: &ContextEffect) -> Result<()> {
    let bytes = csv_bytes(
        &["k", "norm_musical", "norm_nonmusical", "diff"],
        effect.rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                r.norm_musical.to_string(),
                r.norm_nonmusical.to_string(),
                r.diff.to_string(),
            ]
        }),
    )?;
    crate::atomic_write(path, &bytes)
}

/// One row of `regressions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionRow {
    pub analysis: String,
    pub x: Option<usize>,
    pub result: RegressionResult,
}

pub fn write_regressions_csv(path: &Path, rows: &[RegressionRow]) -> Result<()> {
    let bytes = csv_bytes(
        &["analysis", "x", "slope", "intercept", "r2", "p", "n"],
        rows.iter().map(|r| {
            vec![
                r.analysis.clone(),
                r.x.map(|x| x.to_string()).unwrap_or_default(),
                r.result.slope.to_string(),
                r.result.intercept.to_string(),
                r.result.r_squared.to_string(),
                r.result.p_value.to_string(),
                r.result.n.to_string(),
            ]
        }),
    )?;
    crate::atomic_write(path, &bytes)
}
