//! End-to-end analysis of a stimulus set: evaluation, the four analyses and
//! their CSV outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use super::*;
use crate::dsp::{load_audio, load_spectrogram, mel_spectrogram, DspConfig, MelSpectrogram};
use crate::stimuli::{synthesize, transitions, StimulusSet, NOTES_PER_SEQUENCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    All,
    Timelapse,
    Interval,
    Context,
}

impl FromStr for Which {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Which::All),
            "timelapse" => Ok(Which::Timelapse),
            "interval" => Ok(Which::Interval),
            "context" => Ok(Which::Context),
            _ => Err(Error::InvalidInput(format!(
                "unknown analysis `{s}` (all|timelapse|interval|context)"
            ))),
        }
    }
}

/// What the per-clip totals are regressed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    Rank,
    MeanRating,
}

impl FromStr for Regressor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(Regressor::Rank),
            "rating" => Ok(Regressor::MeanRating),
            _ => Err(Error::InvalidInput(format!("unknown regressor `{s}` (rank|rating)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub eval_hop: usize,
    /// Time lapses evaluated: `1..=x_max`.
    pub x_max: usize,
    /// Lapses at which interval and context regressions are reported.
    pub regression_xs: Vec<usize>,
    /// Lapse whose per-index series is written to `context.csv`.
    pub context_x: usize,
    pub group_size: usize,
    pub regressor: Regressor,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            eval_hop: 1,
            x_max: 8,
            regression_xs: vec![1, 2, 3, 4, 5],
            context_x: 3,
            group_size: 10,
            regressor: Regressor::Rank,
        }
    }
}

/// Spectrograms and transition metadata of a stimulus set, in set order.
#[derive(Debug, Clone)]
pub struct StimulusData {
    pub set: StimulusSet,
    pub specs: Vec<MelSpectrogram>,
    pub transitions: Vec<Vec<Transition>>,
}

impl StimulusData {
    /// Synthesize every sequence in memory.
    pub fn synthesize(set: StimulusSet, timbre: &[f64], dsp: &DspConfig) -> Result<Self> {
        let specs = set
            .sequences
            .par_iter()
            .map(|s| mel_spectrogram(&synthesize(s, timbre)?, dsp, &s.id))
            .collect::<Result<Vec<_>>>()?;
        Self::with_specs(set, specs, dsp)
    }

    /// Load `<id>.mels` (preferred) or `<id>.wav` for every sequence from `dir`.
    pub fn load(set: StimulusSet, dir: &Path, dsp: &DspConfig) -> Result<Self> {
        let specs = set
            .sequences
            .par_iter()
            .map(|s| {
                let mels = dir.join(format!("{}.mels", s.id));
                if mels.exists() {
                    load_spectrogram(&mels)
                } else {
                    mel_spectrogram(&load_audio(&dir.join(format!("{}.wav", s.id)), false)?, dsp, &s.id)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_specs(set, specs, dsp)
    }

    fn with_specs(set: StimulusSet, specs: Vec<MelSpectrogram>, dsp: &DspConfig) -> Result<Self> {
        let transitions = set
            .sequences
            .iter()
            .map(|s| transitions(s, dsp))
            .collect::<Result<Vec<_>>>()?;
        Ok(StimulusData { set, specs, transitions })
    }

    /// Human ranks when ratings are attached, otherwise the interval-size proxy.
    pub fn ranking(&self) -> BTreeMap<String, usize> {
        match &self.set.ratings {
            Some(r) => r.iter().map(|(id, r)| (id.clone(), r.rank)).collect(),
            None => crate::stimuli::proxy_ranking(&self.set),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub evaluations: Vec<StimulusEvaluation>,
    pub ranking: BTreeMap<String, usize>,
    pub musicality: Option<RegressionResult>,
    pub musicality_spearman: Option<f64>,
    pub transition_errors: Vec<TransitionError>,
    pub curves: Vec<GroupCurve>,
    pub interval: Vec<(usize, RegressionResult)>,
    pub context: Vec<ContextEffect>,
    pub regressions: Vec<RegressionRow>,
}

impl AnalysisReport {
    pub fn context_at(&self, x: usize) -> Option<&ContextEffect> {
        self.context.iter().find(|c| c.x == x)
    }

    pub fn interval_at(&self, x: usize) -> Option<&RegressionResult> {
        self.interval.iter().find(|(xx, _)| *xx == x).map(|(_, r)| r)
    }

    /// Mean error at lapse `x` over all scored transitions.
    pub fn mean_at(&self, x: usize) -> Option<f64> {
        let v: Vec<f64> = self.transition_errors.iter().filter(|e| e.x == x).map(|e| e.mse).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Evaluate and analyse; `musicality` is computed only for [`Which::All`].
pub fn analyze(predictor: &impl Predictor, data: &StimulusData, which: Which, opts: &AnalysisOptions) -> Result<AnalysisReport> {
    let evaluations = evaluate_set(predictor, &data.specs, opts.eval_hop)?;
    let ranking = data.ranking();
    let mut report = AnalysisReport {
        evaluations,
        ranking,
        musicality: None,
        musicality_spearman: None,
        transition_errors: Vec::new(),
        curves: Vec::new(),
        interval: Vec::new(),
        context: Vec::new(),
        regressions: Vec::new(),
    };

    if which == Which::All {
        let totals: Vec<(String, f64)> = report.evaluations.iter().map(|e| (e.id.clone(), e.total())).collect();
        let reg = match (opts.regressor, &data.set.ratings) {
            (Regressor::MeanRating, Some(r)) => {
                let x: Vec<f64> = totals.iter().map(|(id, _)| r[id].mean_rating).collect();
                let y: Vec<f64> = totals.iter().map(|t| t.1).collect();
                ols_regress(&x, &y)?
            }
            (Regressor::MeanRating, None) => {
                return Err(Error::Ratings("regressor `rating` needs a ratings file".into()));
            }
            (Regressor::Rank, _) => musicality_regression(&totals, &report.ranking)?,
        };
        let ranks: Vec<f64> = totals.iter().map(|(id, _)| report.ranking[id] as f64).collect();
        let ys: Vec<f64> = totals.iter().map(|t| t.1).collect();
        report.musicality_spearman = spearman_rho(&ranks, &ys).ok();
        report.musicality = Some(reg);
        report.regressions.push(RegressionRow {
            analysis: "musicality".into(),
            x: None,
            result: reg,
        });
    }

    report.transition_errors = error_by_timelapse(&report.evaluations, &data.transitions, 1..=opts.x_max)?;
    let groups = Groups::from_ranking(&report.ranking, opts.group_size)?;

    if matches!(which, Which::All | Which::Timelapse) {
        report.curves = group_curves(&report.transition_errors, &data.transitions, &groups)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = (1..=opts.x_max)
            .filter_map(|x| report.mean_at(x).map(|m| (x as f64, m)))
            .unzip();
        if xs.len() >= 3 {
            report.regressions.push(RegressionRow {
                analysis: "timelapse".into(),
                x: None,
                result: ols_regress(&xs, &ys)?,
            });
        }
    }
    if matches!(which, Which::All | Which::Interval) {
        for &x in &opts.regression_xs {
            let r = interval_regression(&report.transition_errors, &data.transitions, x)?;
            report.interval.push((x, r));
            report.regressions.push(RegressionRow {
                analysis: "interval".into(),
                x: Some(x),
                result: r,
            });
        }
    }
    if matches!(which, Which::All | Which::Context) {
        let mut xs = opts.regression_xs.clone();
        if !xs.contains(&opts.context_x) {
            xs.push(opts.context_x);
        }
        for x in xs {
            let c = context_effect(&report.transition_errors, &data.transitions, &groups, x, NOTES_PER_SEQUENCE - 1)?;
            if let Some(r) = c.regression {
                report.regressions.push(RegressionRow {
                    analysis: "context".into(),
                    x: Some(x),
                    result: r,
                });
            }
            report.context.push(c);
        }
    }
    Ok(report)
}

/// Write the CSVs belonging to `which` into `dir`.
pub fn write_report(dir: &Path, report: &AnalysisReport, data: &StimulusData, which: Which, opts: &AnalysisOptions) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let groups = Groups::from_ranking(&report.ranking, opts.group_size)?;
    if which == Which::All {
        write_per_sequence_csv(&dir.join("per_sequence.csv"), &per_sequence_rows(report))?;
    }
    if matches!(which, Which::All | Which::Timelapse) {
        write_timelapse_csv(&dir.join("timelapse.csv"), &report.transition_errors, &groups)?;
        write_curve_csv(&dir.join("timelapse_curve.csv"), &report.curves)?;
    }
    if matches!(which, Which::All | Which::Interval) {
        write_interval_csv(&dir.join("interval.csv"), &report.transition_errors, &data.transitions, &opts.regression_xs)?;
    }
    if matches!(which, Which::All | Which::Context) {
        if let Some(c) = report.context_at(opts.context_x) {
            write_context_csv(&dir.join("context.csv"), c)?;
        }
    }
    write_regressions_csv(&dir.join("regressions.csv"), &report.regressions)
}

pub fn per_sequence_rows(report: &AnalysisReport) -> Vec<(String, f64, usize)> {
    report
        .evaluations
        .iter()
        .map(|e| (e.id.clone(), e.total(), report.ranking.get(&e.id).copied().unwrap_or(0)))
        .collect()
}

/// `group,x,ms,mean_mse,n` rows of the per-group time-lapse curves.
pub fn write_curve_csv(path: &Path, curves: &[GroupCurve]) -> Result<()> {
    let rows = curves.iter().flat_map(|c| {
        c.per_x.iter().map(move |&(x, m, n)| {
            vec![
                c.group.to_string(),
                x.to_string(),
                format!("{:.2}", timelapse_ms(x)),
                m.to_string(),
                n.to_string(),
            ]
        })
    });
    let bytes = csv_bytes(&["group", "x", "ms", "mean_mse", "n"], rows)?;
    crate::atomic_write(path, &bytes)
}
