//! Deterministic orbital 5G core: NAS codec, AMF, SMF, UPF, an emulated
//! satellite link and a discrete-event harness that ties them together.

pub mod amf;
pub mod harness;
pub mod nas;
pub mod net;
pub mod ngap;
pub mod ran;
pub mod satlink;
pub mod smf;
pub mod transport;
pub mod upf;
