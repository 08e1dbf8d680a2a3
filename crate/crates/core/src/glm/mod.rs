//! Logistic regression engine shared by every nuisance model and targeting
//! step, plus the outcome unit-interval transform.

mod design;
mod fit;
mod scale;

pub use design::{Assign, DesignMatrix, DesignSpec, ResolvedDesign, Term, Var};
pub use fit::{expit, fit_logistic, logit, predict_prob, FitOptions, LogisticFit};
pub use scale::{Direction, UnitScale};
