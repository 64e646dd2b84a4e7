//! Strong-coupling polaron numerics on a periodic box.

pub mod grid;
pub mod electron;
pub mod landau_pekar;
pub mod krylov;
pub mod fluctuations;
pub mod oracle;
