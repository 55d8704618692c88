//! Satellite-terrestrial link emulation.

pub mod geometry;
pub mod link;

pub use geometry::{
    compare_fiber_vs_leo, fiber_latency_us, propagation_delay_us, GeometryError, LatencyComparison,
    OrbitGeometry, DEFAULT_FIBER_STRETCH, EARTH_RADIUS_KM, SPEED_OF_LIGHT_M_S,
};
pub use link::{
    serialization_us, ContactSchedule, ContactWindow, DropReason, LinkDirection, LinkError,
    LinkProfile, Outcome, SatLink, Transmission, WindowPolicy, DEFAULT_QUEUE_CAPACITY,
};
