//! Rendering-parameter vocabulary, HTML preprocessing and the visual
//! complexity filter.

pub mod html;
pub mod rp;
pub mod vc;
