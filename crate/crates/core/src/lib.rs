pub mod poly;
pub mod sdp;
pub mod sos;
pub mod powersys;
pub mod sim;
pub mod shaping;
pub mod roa;
pub mod cli;
