pub mod augment;
pub mod density;
pub mod flow;
pub mod io;
pub mod model;
pub mod raster;
pub mod synthetic;
pub mod tensor;
pub mod train;
