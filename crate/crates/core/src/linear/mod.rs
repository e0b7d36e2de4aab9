pub mod lobpcg;
pub mod minres;
