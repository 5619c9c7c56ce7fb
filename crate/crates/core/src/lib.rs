//! Headless simulation of an electric forklift fleet on a directed road
//! network, with a force-balance battery model and two trajectory analyses:
//! congestion detection by network-distance clustering and charger placement
//! checked against an occupancy heatmap.

pub mod battery;
pub mod density;
pub mod fixtures;
pub mod fleet;
pub mod numfmt;
pub mod odr;
pub mod placement;
pub mod rng;
pub mod roadnet;
pub mod trajectory;
