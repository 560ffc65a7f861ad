pub mod detect;
pub mod eval;
pub mod export;
pub mod synthetic;
pub mod train_sup;
pub mod train_unsup;
