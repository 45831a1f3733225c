pub mod autodiff;
pub mod dsp;
pub mod model;
pub mod signal_io;
pub mod training;
pub mod serving;
