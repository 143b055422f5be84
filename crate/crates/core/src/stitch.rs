//! Stitching LOIs from many runs into one fine-grain profile, plus polynomial smoothing.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::GroundTruth;
use crate::telemetry::{Component, LoiSample, Nanos, Phase, PhaseBoundaries, RunId, NS_PER_US};

/// TOIs closer than this (same slot) are merged into one point.
pub const TOI_RESOLUTION: Nanos = NS_PER_US;

pub const DEFAULT_FIT_DEGREE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub toi: Nanos,
    pub power: f64,
    /// Contributing run (the smallest id when several runs were merged).
    pub run_id: RunId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchedProfile {
    pub kernel_id: String,
    pub phase: Phase,
    pub component: Component,
    pub points: Vec<ProfilePoint>,
    pub exec_time_anchor: Nanos,
}

impl StitchedProfile {
    /// TOI-weighted mean power (trapezoid rule over the points).
    pub fn mean_power(&self) -> Result<f64> {
        let pts = &self.points;
        match pts.len() {
            0 => Err(Error::EmptyProfile(format!(
                "{} {} profile of '{}' has no points",
                self.phase, self.component, self.kernel_id
            ))),
            1 => Ok(pts[0].power),
            _ => {
                let span = (pts[pts.len() - 1].toi - pts[0].toi) as f64;
                if span <= 0.0 {
                    return Ok(pts.iter().map(|p| p.power).sum::<f64>() / pts.len() as f64);
                }
                let area: f64 = pts
                    .windows(2)
                    .map(|w| 0.5 * (w[0].power + w[1].power) * (w[1].toi - w[0].toi) as f64)
                    .sum();
                Ok(area / span)
            }
        }
    }

    pub fn powers(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.power)
    }
}

/// Collects the LOIs taken during each run's `phase` execution into a TOI-ordered profile.
///
/// LOIs from runs missing in `phase_bounds` are ignored, which is how discarded
/// (non-golden) runs stay out of the profile.
pub fn stitch(
    lois: &[LoiSample],
    phase_bounds: &BTreeMap<RunId, PhaseBoundaries>,
    phase: Phase,
    component: Component,
    kernel_id: &str,
    exec_time_anchor: Nanos,
) -> Result<StitchedProfile> {
    let mut picked: Vec<(Nanos, RunId, u64)> = lois
        .iter()
        .filter(|l| {
            phase_bounds
                .get(&l.run_id)
                .is_some_and(|b| b.index_of(phase) == l.exec_index)
        })
        .map(|l| (l.toi, l.run_id, l.power.get(component).to_bits()))
        .collect();
    if picked.is_empty() {
        return Err(Error::EmptyProfile(format!(
            "no {phase} LOIs for kernel '{kernel_id}'"
        )));
    }
    // total order so the merge below does not depend on input order
    picked.sort_unstable();

    let mut points = Vec::new();
    let mut i = 0;
    while i < picked.len() {
        let slot = picked[i].0.div_euclid(TOI_RESOLUTION);
        let j = i + picked[i..]
            .iter()
            .take_while(|p| p.0.div_euclid(TOI_RESOLUTION) == slot)
            .count();
        let group = &picked[i..j];
        let n = group.len() as f64;
        let toi_sum: i128 = group.iter().map(|p| p.0 as i128).sum();
        points.push(ProfilePoint {
            toi: (toi_sum as f64 / n).round() as Nanos,
            power: group.iter().map(|p| f64::from_bits(p.2)).sum::<f64>() / n,
            run_id: group.iter().map(|p| p.1).min().expect("non-empty group"),
        });
        i = j;
    }

    Ok(StitchedProfile {
        kernel_id: kernel_id.to_string(),
        phase,
        component,
        points,
        exec_time_anchor,
    })
}

/// Least-squares polynomial over TOI normalized by the execution-time anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub degree: usize,
    /// Ascending powers of `toi / domain_ns`.
    pub coefficients: Vec<f64>,
    pub rms_residual: f64,
    pub domain_ns: Nanos,
}

impl PolyFit {
    pub fn eval(&self, toi: Nanos) -> f64 {
        let x = toi as f64 / self.domain_ns as f64;
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

pub fn fit_poly(profile: &StitchedProfile, degree: usize) -> Result<PolyFit> {
    let mut distinct: Vec<Nanos> = profile.points.iter().map(|p| p.toi).collect();
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(Error::Underdetermined {
            degree,
            needed: degree + 1,
            found: distinct.len(),
        });
    }
    let domain_ns = profile.exec_time_anchor.max(1);
    let xs: Vec<f64> = profile.points.iter().map(|p| p.toi as f64 / domain_ns as f64).collect();
    let ys = DVector::from_iterator(xs.len(), profile.powers());
    let vandermonde = DMatrix::from_fn(xs.len(), degree + 1, |r, c| xs[r].powi(c as i32));
    let svd = vandermonde.clone().svd(true, true);
    let coef = svd
        .solve(&ys, 1e-12)
        .map_err(|e| Error::InvalidConfig(format!("least-squares solve failed: {e}")))?;
    let residual = &vandermonde * &coef - &ys;
    let rms_residual = (residual.norm_squared() / xs.len() as f64).sqrt();
    Ok(PolyFit {
        degree,
        coefficients: coef.iter().copied().collect(),
        rms_residual,
        domain_ns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileError {
    pub rms: f64,
    pub max_abs: f64,
}

/// Error of each stitched point against the steady-state logged power at the same TOI.
pub fn profile_error(profile: &StitchedProfile, truth: &GroundTruth) -> Result<ProfileError> {
    if profile.points.is_empty() {
        return Err(Error::EmptyProfile("profile has no points".into()));
    }
    let window = truth.logger.averaging_window;
    let mut sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for p in &profile.points {
        let reference = truth
            .steady_window_average(&profile.kernel_id, p.toi, window)?
            .get(profile.component);
        let e = p.power - reference;
        sq += e * e;
        max_abs = max_abs.max(e.abs());
    }
    Ok(ProfileError {
        rms: (sq / profile.points.len() as f64).sqrt(),
        max_abs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::ComponentPower;
    use proptest::prelude::*;

    const US: Nanos = NS_PER_US;

    fn loi(run: RunId, exec: u32, toi: Nanos, watts: f64) -> LoiSample {
        LoiSample {
            run_id: run,
            exec_index: exec,
            kernel_id: "k".into(),
            toi,
            power: ComponentPower::from_parts(watts, 0.0, 0.0, 0.0),
            mixed: false,
        }
    }

    fn bounds(runs: &[RunId], sse: u32, ssp: u32) -> BTreeMap<RunId, PhaseBoundaries> {
        runs.iter()
            .map(|&r| {
                (
                    r,
                    PhaseBoundaries {
                        warmup_count: sse,
                        sse_index: sse,
                        ssp_index: ssp,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn points_sorted_by_toi() {
        let lois = vec![loi(1, 3, 10 * US, 1.0), loi(2, 3, 5 * US, 2.0), loi(3, 3, 20 * US, 3.0)];
        let p = stitch(&lois, &bounds(&[1, 2, 3], 3, 3), Phase::Ssp, Component::Total, "k", 30 * US).unwrap();
        let tois: Vec<Nanos> = p.points.iter().map(|x| x.toi).collect();
        assert_eq!(tois, vec![5 * US, 10 * US, 20 * US]);
    }

    #[test]
    fn colliding_tois_are_averaged() {
        let lois = vec![loi(1, 3, 10_000, 500.0), loi(2, 3, 10_400, 510.0)];
        let p = stitch(&lois, &bounds(&[1, 2], 3, 3), Phase::Ssp, Component::Total, "k", 30 * US).unwrap();
        assert_eq!(p.points.len(), 1);
        assert_eq!(p.points[0].toi, 10_200);
        assert_eq!(p.points[0].power, 505.0);
        assert_eq!(p.points[0].run_id, 1);
    }

    #[test]
    fn filters_by_phase_index_and_run() {
        let lois = vec![
            loi(1, 3, 1_000, 1.0),
            loi(1, 15, 2_000, 2.0),
            loi(2, 15, 3_000, 3.0),
            loi(9, 15, 4_000, 9.0), // not a golden run
        ];
        let b = bounds(&[1, 2], 3, 15);
        let ssp = stitch(&lois, &b, Phase::Ssp, Component::Total, "k", 10_000).unwrap();
        assert_eq!(ssp.powers().collect::<Vec<_>>(), vec![2.0, 3.0]);
        let sse = stitch(&lois, &b, Phase::Sse, Component::Total, "k", 10_000).unwrap();
        assert_eq!(sse.powers().collect::<Vec<_>>(), vec![1.0]);
        assert!(matches!(
            stitch(&lois[3..], &b, Phase::Ssp, Component::Total, "k", 10_000),
            Err(Error::EmptyProfile(_))
        ));
    }

    proptest! {
        #[test]
        fn stitch_is_permutation_invariant(
            raw in proptest::collection::vec((0u32..5, 0i64..50_000, 0.0..800.0f64), 1..60),
            rot in 0usize..60,
        ) {
            let lois: Vec<LoiSample> = raw.iter().map(|&(r, t, w)| loi(r, 3, t, w)).collect();
            let mut shuffled = lois.clone();
            shuffled.reverse();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            let b = bounds(&[0, 1, 2, 3, 4], 3, 3);
            let a = stitch(&lois, &b, Phase::Ssp, Component::Total, "k", 50_000).unwrap();
            let c = stitch(&shuffled, &b, Phase::Ssp, Component::Total, "k", 50_000).unwrap();
            prop_assert_eq!(a, c);
        }
    }

    fn profile_from(points: Vec<(Nanos, f64)>, anchor: Nanos) -> StitchedProfile {
        StitchedProfile {
            kernel_id: "k".into(),
            phase: Phase::Ssp,
            component: Component::Total,
            points: points
                .into_iter()
                .map(|(toi, power)| ProfilePoint { toi, power, run_id: 0 })
                .collect(),
            exec_time_anchor: anchor,
        }
    }

    #[test]
    fn fit_constant() {
        let p = profile_from((0..10).map(|i| (i * 10 * US, 300.0)).collect(), 100 * US);
        let fit = fit_poly(&p, 4).unwrap();
        assert!((fit.coefficients[0] - 300.0).abs() < 1e-8);
        for c in &fit.coefficients[1..] {
            assert!(c.abs() < 1e-6, "{:?}", fit.coefficients);
        }
        assert!(fit.rms_residual < 1e-8);
    }

    #[test]
    fn fit_recovers_cubic() {
        let anchor = 400 * US;
        let f = |x: f64| 350.0 + 120.0 * x - 300.0 * x * x + 180.0 * x * x * x;
        let p = profile_from(
            (0..40).map(|i| {
                let toi = i * 10 * US;
                (toi, f(toi as f64 / anchor as f64))
            })
            .collect(),
            anchor,
        );
        let fit = fit_poly(&p, 4).unwrap();
        assert!(fit.rms_residual <= 1e-6 * 350.0);
        assert!((fit.eval(123 * US) - f(123.0 / 400.0)).abs() < 1e-6);
    }

    #[test]
    fn degree_zero_is_mean() {
        let p = profile_from(vec![(0, 100.0), (10, 200.0), (20, 600.0)], 30);
        let fit = fit_poly(&p, 0).unwrap();
        assert!((fit.coefficients[0] - 300.0).abs() < 1e-9);
    }

    #[test]
    fn underdetermined_fit() {
        let p = profile_from(vec![(0, 1.0), (10, 2.0), (20, 3.0), (30, 4.0)], 40);
        assert!(matches!(fit_poly(&p, 4), Err(Error::Underdetermined { found: 4, .. })));
    }

    #[test]
    fn trapezoid_mean() {
        let p = profile_from(vec![(0, 100.0), (10, 200.0), (30, 200.0)], 40);
        // area = 1500 + 4000 over span 30
        assert!((p.mean_power().unwrap() - 5500.0 / 30.0).abs() < 1e-12);
    }
}
