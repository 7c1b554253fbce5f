//! Executable versions of the local and global convergence theory: derivative
//! formulas, Jacobian blocks at fixed points, rate bounds, the descent
//! functional and the fixed-point landscape.

mod derivatives;
mod functional;
mod jacobian;
mod landscape;

pub use derivatives::{check_tangent, dbtilde_dp, df_dp, dp_dh, tangent_from_coords, TANGENT_TOL};
pub(crate) use functional::tangent_chart_with;
pub use functional::{
    closed_form_curvature, functional_f, saddle_curvature, saddle_curvature_with, tangent_chart,
    SaddleCurvature, CURVATURE_STEP,
};
pub use jacobian::{gamma_bound, jacobian_blocks, GammaBound, JacobianBlocks, JacobianReport, FIXED_TOL};
pub use landscape::{
    binomial, enumerate_invariant_projectors, genericity_check, nearest_invariant_projector, EnumerationOptions,
    FixedPointReport, GenericityReport, NearestInvariant, Stability, AMBIGUITY_BAND, DISTINCT_TOL,
    ENUMERATION_CAP,
};
