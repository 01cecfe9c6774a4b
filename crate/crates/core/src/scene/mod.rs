//! Scene domain: types, ego-centric transforms, polyline resampling,
//! padding/validity, route derivation, and dataset serialization.

pub mod frame;
pub mod io;
pub mod pad;
pub mod polyline;
pub mod route;
pub mod types;

pub use frame::{to_ego_frame, wrap_angle, EgoFrame, Pose2};
pub use io::{decode_scene, encode_scene, DatasetManifest, DatasetReader, DatasetWriter};
pub use pad::{pad_and_mask, select_nearest_indices};
pub use polyline::{arc_length, resample_polyline, SamplePoint};
pub use route::{derive_navigation_route, RouteLane};
pub use types::{
    agent_attr, lane_attr, route_attr, AgentFuture, AgentTrack, EgoState, MapLane,
    NavigationRoute, Scene, SceneDims, ValidityMask, EGO_DIM,
};
