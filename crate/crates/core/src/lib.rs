pub mod landau;
pub mod laguerre;
pub mod quadrature;
pub mod stats;
pub mod acceptance;
pub mod dpp;
pub mod kernel;
pub mod testfn;
pub mod torus;
