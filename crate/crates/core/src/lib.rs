pub mod aaf;
pub mod corrupt;
pub mod dataio;
pub mod epochs;
pub mod eval;
pub mod modality;
pub mod nnblocks;
pub mod rngkey;
pub mod scalar;
pub mod sigprep;
pub mod tensorgrad;
pub mod trainer;

pub use epochs::EpochStudy;
pub use modality::Modality;
pub use scalar::Scalar;

pub type Tensor32 = tensorgrad::Tensor<f32>;
pub type Tensor64 = tensorgrad::Tensor<f64>;
pub type Graph32 = tensorgrad::Graph<f32>;
pub type Graph64 = tensorgrad::Graph<f64>;
pub type ParamStore32 = tensorgrad::ParamStore<f32>;
pub type ParamStore64 = tensorgrad::ParamStore<f64>;
