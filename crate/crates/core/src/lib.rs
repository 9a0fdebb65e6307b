pub mod error;
pub mod hvo;
pub mod markov;
pub mod model;
pub mod nav;
pub mod scalar;
pub mod session;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use hvo::{GridEvent, HvoPattern};
pub use model::{LatentVec, ModelWeights};
pub use nav::{TrianglePos, TriangleRefs};
pub use session::{ControlMessage, Session, SessionConfig};

pub type Weights = ModelWeights<f32>;
pub type Weights64 = ModelWeights<f64>;
pub type Latent = LatentVec<f32>;
pub type Latent64 = LatentVec<f64>;
pub type Refs = TriangleRefs<f32>;
pub type Refs64 = TriangleRefs<f64>;
pub type Curve = transport::ModulationCurve<f64>;
