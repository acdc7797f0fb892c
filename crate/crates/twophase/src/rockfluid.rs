//! Constitutive models: capillary pressure, relative permeability, phase
//! mobilities, and the upwinding rule. All functions are pure; saturations
//! outside the physical range are handled by clamping the effective
//! saturation, which keeps capillary curves and their derivatives finite
//! during rough Newton iterates.

use serde::{Deserialize, Serialize};

/// Constant phase densities and viscosities (incompressible phases).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidProps {
    /// Wetting phase density (kg/m^3).
    pub rho_w: f64,
    /// Non-wetting phase density (kg/m^3).
    pub rho_n: f64,
    /// Wetting phase viscosity (Pa.s).
    pub mu_w: f64,
    /// Non-wetting phase viscosity (Pa.s).
    pub mu_n: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
}

/// Per-cell rock properties with a diagonal permeability tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RockProps {
    pub porosity: Vec<f64>,
    /// Diagonal permeability (m^2) per cell: [Kx, Ky, Kz].
    pub perm: Vec<[f64; 3]>,
    /// Residual wetting saturation.
    pub s_wr: f64,
    /// Residual non-wetting saturation.
    pub s_nr: f64,
}

impl RockProps {
    pub fn uniform(n_cells: usize, porosity: f64, perm: f64, s_wr: f64, s_nr: f64) -> Self {
        Self {
            porosity: vec![porosity; n_cells],
            perm: vec![[perm; 3]; n_cells],
            s_wr,
            s_nr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CapillaryKind {
    /// P_c = P0 (1 - Se).
    Linear { p0: f64 },
    /// P_c = Pd Se^(-1/lambda).
    BrooksCorey { pd: f64, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapillaryModel {
    pub kind: CapillaryKind,
    /// Floor for the effective saturation; regularizes the Brooks-Corey
    /// singularity at Se -> 0.
    pub epsilon_s: f64,
}

impl CapillaryModel {
    pub fn linear(p0: f64) -> Self {
        Self { kind: CapillaryKind::Linear { p0 }, epsilon_s: 1e-3 }
    }

    pub fn brooks_corey(pd: f64, lambda: f64) -> Self {
        Self { kind: CapillaryKind::BrooksCorey { pd, lambda }, epsilon_s: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RelPermModel {
    /// krw = Se^2, krn = (1 - Se)^2.
    Quadratic,
    /// Burdine forms paired with the Brooks-Corey retention curve:
    /// krw = Se^((2+3L)/L), krn = (1-Se)^2 (1 - Se^((2+L)/L)).
    Corey { lambda: f64 },
}

/// Effective saturation Se = (s_w - s_wr) / (1 - s_wr - s_nr), clamped to
/// [eps_s, 1].
pub fn effective_saturation(s_w: f64, rock: &RockProps, eps_s: f64) -> f64 {
    let raw = (s_w - rock.s_wr) / (1.0 - rock.s_wr - rock.s_nr);
    raw.clamp(eps_s, 1.0)
}

/// d(Se)/d(s_w): the chain factor on the interior branch, zero where the
/// clamp is active.
pub fn effective_saturation_deriv(s_w: f64, rock: &RockProps, eps_s: f64) -> f64 {
    let span = 1.0 - rock.s_wr - rock.s_nr;
    let raw = (s_w - rock.s_wr) / span;
    if raw <= eps_s || raw >= 1.0 {
        0.0
    } else {
        1.0 / span
    }
}

pub fn capillary_pressure(s_w: f64, model: &CapillaryModel, rock: &RockProps) -> f64 {
    let se = effective_saturation(s_w, rock, model.epsilon_s);
    match model.kind {
        CapillaryKind::Linear { p0 } => p0 * (1.0 - se),
        CapillaryKind::BrooksCorey { pd, lambda } => pd * se.powf(-1.0 / lambda),
    }
}

/// Analytic dP_c/ds_w on the clamped branch; zero where the clamp is active.
pub fn capillary_derivative(s_w: f64, model: &CapillaryModel, rock: &RockProps) -> f64 {
    let chain = effective_saturation_deriv(s_w, rock, model.epsilon_s);
    if chain == 0.0 {
        return 0.0;
    }
    let se = effective_saturation(s_w, rock, model.epsilon_s);
    let dpc_dse = match model.kind {
        CapillaryKind::Linear { p0 } => -p0,
        CapillaryKind::BrooksCorey { pd, lambda } => {
            -pd / lambda * se.powf(-1.0 / lambda - 1.0)
        }
    };
    dpc_dse * chain
}

/// Relative permeabilities (krw, krn) as a function of wetting saturation.
pub fn relative_permeability(s_w: f64, model: &RelPermModel, rock: &RockProps, eps_s: f64) -> (f64, f64) {
    let se = effective_saturation(s_w, rock, eps_s);
    rel_perm_of_se(se, model)
}

fn rel_perm_of_se(se: f64, model: &RelPermModel) -> (f64, f64) {
    match *model {
        RelPermModel::Quadratic => (se * se, (1.0 - se) * (1.0 - se)),
        RelPermModel::Corey { lambda } => {
            let ew = (2.0 + 3.0 * lambda) / lambda;
            let en = (2.0 + lambda) / lambda;
            let krw = se.powf(ew);
            let krn = (1.0 - se) * (1.0 - se) * (1.0 - se.powf(en));
            (krw, krn)
        }
    }
}

/// d(krw)/ds_w and d(krn)/ds_w, including the effective-saturation chain.
pub fn relative_permeability_deriv(
    s_w: f64,
    model: &RelPermModel,
    rock: &RockProps,
    eps_s: f64,
) -> (f64, f64) {
    let chain = effective_saturation_deriv(s_w, rock, eps_s);
    if chain == 0.0 {
        return (0.0, 0.0);
    }
    let se = effective_saturation(s_w, rock, eps_s);
    let (dw, dn) = match *model {
        RelPermModel::Quadratic => (2.0 * se, -2.0 * (1.0 - se)),
        RelPermModel::Corey { lambda } => {
            let ew = (2.0 + 3.0 * lambda) / lambda;
            let en = (2.0 + lambda) / lambda;
            let dw = ew * se.powf(ew - 1.0);
            let dn = -2.0 * (1.0 - se) * (1.0 - se.powf(en))
                - (1.0 - se) * (1.0 - se) * en * se.powf(en - 1.0);
            (dw, dn)
        }
    };
    (dw * chain, dn * chain)
}

/// Donor-cell selection: the `i`-side value when the flux indicator is
/// positive, the `j`-side value otherwise (a zero indicator takes `j`).
pub fn upwind_coefficient<T>(value_i: T, value_j: T, flux_indicator: f64) -> T {
    if flux_indicator > 0.0 {
        value_i
    } else {
        value_j
    }
}
