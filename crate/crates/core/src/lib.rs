//! Kronecker-factored quasi-Newton optimizers (K-BFGS, K-BFGS(L)) for
//! multilayer perceptrons and convolutional networks, with KFAC, Adam and
//! SGD-with-momentum baselines and brute-force oracles for the Kronecker
//! structure of layer gradients and Hessians.
//!
//! The linear-algebra kernel ([`tensor`]) and the quasi-Newton machinery
//! ([`curvature`]) are generic over [`Scalar`]; networks, optimizers and
//! datasets work in `f64` through the aliases below.

pub mod curvature;
pub mod data;
pub mod error;
pub mod scalar;
pub mod kron;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{SymEig, Tensor};

/// Double-precision tensor used throughout the network and optimizer code.
pub type Mat = Tensor<f64>;
pub type Mat32 = Tensor<f32>;
