pub mod error;
pub mod ccp;
pub mod conic;
pub mod kfactor;
pub mod lti;
pub mod loops;
pub mod plant;
pub mod sim;
pub mod verify;

pub use error::{Error, Result, Stage};
pub use lti::{FrequencyGrid, Polynomial, RationalTF, StateSpace, TransferFunction};
