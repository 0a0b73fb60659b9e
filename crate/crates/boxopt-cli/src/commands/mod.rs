pub mod bench;
pub mod check;
pub mod solve;
