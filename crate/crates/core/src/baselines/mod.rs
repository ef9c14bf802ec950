//! Comparison classifiers: RBF SVM, random forest and Fisher's LDA.

pub mod flda;
pub mod forest;
pub mod svm;

pub use flda::{flda_fit, FldaModel, FldaParams};
pub use forest::{rf_fit, ForestModel, ForestParams, Node, Tree};
pub use svm::{fit_platt, rbf, svm_fit, Platt, SmoDiagnostics, SvmModel, SvmParams};
