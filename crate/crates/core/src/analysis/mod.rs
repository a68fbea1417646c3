//! Quantitative models: closed-form hole bounds evaluated exactly, a
//! Monte-Carlo oracle for the same race, and the relaxation error model.

mod dyadic;
mod holes;
mod relaxation;

pub use dyadic::{binomial, Dyadic};
pub use holes::{
    eh_region_bound, eh_total_bound, p_bound, pi_bound, regions, simulate_holes, HoleEstimate,
    FIRST_REGION_CEILING, TOTAL_HOLES_CEILING,
};
pub use relaxation::{epsilon_total, relaxation, RelaxationModel};
