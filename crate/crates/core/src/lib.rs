pub mod delocalize;
pub mod dressed;
pub mod error;
pub mod hilbert;
pub mod krylov;
pub mod linalg;
pub mod lindblad;
pub mod observables;
pub mod propagation;
pub mod units;
