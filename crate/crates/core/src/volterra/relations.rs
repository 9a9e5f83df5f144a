//! Linear relations between the modal parameters of the equivalent linear
//! system and the Kautz parameters of the higher-order kernels:
//! `ω2 = p1·ωn`, `ξ2 = p2·ζn`, `ω3 = p3·ωn`, `ξ3 = p4·ζn`.

use serde::{Deserialize, Serialize};

use super::identify::{identify_two_step, IdentificationSetup};
use super::predict;
use crate::error::{Error, Result};
use crate::kautz::{KautzBasis, KautzPoleSpec};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::plant::{estimate_modal, simulate, ModalEstimate, PlantParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleRelations {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

/// Tabulated per-severity relation factors `(α, p1, p2, p3, p4)`.
const TABULATED: [(f64, [f64; 4]); 7] = [
    (1.00, [1.11, 2.7, 1.06, 1.1]),
    (0.98, [1.07, 2.4, 1.06, 1.1]),
    (0.96, [1.07, 2.3, 1.06, 1.1]),
    (0.94, [1.06, 2.2, 1.06, 1.1]),
    (0.92, [1.06, 2.1, 1.06, 1.1]),
    (0.90, [1.05, 2.0, 1.06, 1.0]),
    (0.86, [1.04, 1.8, 1.05, 1.0]),
];

/// Search box for the relation optimizer.
pub const RELATION_BOUNDS: [(f64, f64); 4] = [(0.5, 5.0), (0.5, 10.0), (0.5, 5.0), (0.5, 10.0)];

pub const MAX_RELATION_EVALUATIONS: usize = 400;

impl PoleRelations {
    pub fn new(p1: f64, p2: f64, p3: f64, p4: f64) -> Self {
        PoleRelations { p1, p2, p3, p4 }
    }

    /// Relations of the healthy reference condition.
    pub fn reference() -> Self {
        Self::from_array(TABULATED[0].1)
    }

    pub fn unit() -> Self {
        PoleRelations::new(1.0, 1.0, 1.0, 1.0)
    }

    /// Tabulated relations for crack severity `alpha`, linearly interpolated
    /// between tabulated severities (0.88 is not tabulated). `None` outside
    /// `[0.86, 1]`.
    pub fn tabulated(alpha: f64) -> Option<Self> {
        if let Some((_, p)) = TABULATED.iter().find(|(a, _)| (a - alpha).abs() < 1e-9) {
            return Some(Self::from_array(*p));
        }
        TABULATED.windows(2).find_map(|w| {
            let (hi, p_hi) = w[0];
            let (lo, p_lo) = w[1];
            (alpha < hi && alpha > lo).then(|| {
                let t = (alpha - lo) / (hi - lo);
                let mut p = [0.0; 4];
                for i in 0..4 {
                    p[i] = p_lo[i] + t * (p_hi[i] - p_lo[i]);
                }
                Self::from_array(p)
            })
        })
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.p1, self.p2, self.p3, self.p4]
    }

    pub fn from_array(p: [f64; 4]) -> Self {
        PoleRelations::new(p[0], p[1], p[2], p[3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "pole relations must be positive: {self:?}"
            )))
        }
    }
}

impl Default for PoleRelations {
    fn default() -> Self {
        Self::reference()
    }
}

/// Kautz basis for one realization: order 1 uses the modal parameters
/// directly, orders 2 and 3 scale them by the relations.
pub fn basis_from_modal(
    modal: &ModalEstimate,
    relations: &PoleRelations,
    n_functions: [usize; 3],
    sample_rate_hz: f64,
    memory_len: usize,
) -> Result<KautzBasis> {
    relations.validate()?;
    let (w, z) = (modal.omega_n_rad_s, modal.zeta);
    KautzBasis::new(
        [
            KautzPoleSpec::new(w, z, sample_rate_hz)?,
            KautzPoleSpec::new(relations.p1 * w, relations.p2 * z, sample_rate_hz)?,
            KautzPoleSpec::new(relations.p3 * w, relations.p4 * z, sample_rate_hz)?,
        ],
        n_functions,
        memory_len,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleRelationFit {
    pub relations: PoleRelations,
    /// Sum of squared prediction errors on the high-amplitude record.
    pub objective: f64,
    pub initial_objective: f64,
    pub evaluations: usize,
    /// False when the evaluation budget ran out first; the relations are then
    /// the best point seen.
    pub converged: bool,
}

/// Squared prediction error of the identify-then-predict pipeline on a
/// deterministic record, as a function of the relations.
pub struct RelationObjective {
    setup: IdentificationSetup,
    modal: ModalEstimate,
    u_low: crate::signals::TimeSeries,
    y_low: crate::signals::TimeSeries,
    u_high: crate::signals::TimeSeries,
    y_high: crate::signals::TimeSeries,
}

impl RelationObjective {
    /// Simulates `plant` (noise free) at both amplitudes and estimates its
    /// modal parameters from the low-amplitude record.
    pub fn new(plant: &PlantParams, setup: &IdentificationSetup) -> Result<Self> {
        setup.validate()?;
        let u_low = setup.low_input()?;
        let u_high = setup.high_input()?;
        let y_low = simulate(plant, &u_low, &setup.sim)?;
        let y_high = simulate(plant, &u_high, &setup.sim)?;
        let modal = estimate_modal(&y_low, &u_low)?;
        Ok(RelationObjective {
            setup: *setup,
            modal,
            u_low,
            y_low,
            u_high,
            y_high,
        })
    }

    pub fn modal(&self) -> ModalEstimate {
        self.modal
    }

    /// `+∞` for relations that yield an invalid basis or an ill-posed fit.
    pub fn evaluate(&self, relations: &PoleRelations) -> f64 {
        self.try_evaluate(relations).unwrap_or(f64::INFINITY)
    }

    fn try_evaluate(&self, relations: &PoleRelations) -> Result<f64> {
        let basis = basis_from_modal(
            &self.modal,
            relations,
            self.setup.n_functions,
            self.setup.sim.sample_rate_hz,
            self.setup.sim.n_samples,
        )?;
        let model =
            identify_two_step(&basis, &self.u_low, &self.y_low, &self.u_high, &self.y_high)?;
        let pred = predict(&model, &self.u_high)?;
        Ok(pred
            .total
            .samples()
            .iter()
            .zip(self.y_high.samples())
            .map(|(a, b)| (a - b).powi(2))
            .sum())
    }
}

/// Fits `p1..p4` on the deterministic (nominal) plant with a bounded
/// Nelder–Mead search starting at `initial`.
pub fn fit_pole_relations(
    nominal_plant: &PlantParams,
    setup: &IdentificationSetup,
    initial: &PoleRelations,
) -> Result<PoleRelationFit> {
    initial.validate()?;
    let objective = RelationObjective::new(nominal_plant, setup)?;
    let initial_objective = objective.evaluate(initial);
    let result = nelder_mead(
        |p: &[f64]| objective.evaluate(&PoleRelations::from_array([p[0], p[1], p[2], p[3]])),
        &initial.to_array(),
        &RELATION_BOUNDS,
        &NelderMeadOptions {
            max_evaluations: MAX_RELATION_EVALUATIONS,
            ..NelderMeadOptions::default()
        },
    );
    let relations = PoleRelations::from_array([result.x[0], result.x[1], result.x[2], result.x[3]]);
    Ok(PoleRelationFit {
        relations,
        objective: result.value,
        initial_objective,
        evaluations: result.evaluations,
        converged: result.converged,
    })
}
