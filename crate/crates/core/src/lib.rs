pub mod annotation;
pub mod chord;
pub mod features;
pub mod io;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod tensor;
pub mod train;
