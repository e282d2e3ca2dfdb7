//! Spatial object graph, image similarity graph, and the two graph
//! convolutions whose outputs are fused into the visual embedding.

mod gcn;
mod geometry;
mod knn;
mod spatial;

pub use gcn::{fuse, image_gcn_forward, object_gcn_forward, pool_image, Activation, ImageGcnParams, ObjectGcnParams};
pub use geometry::{classify_relation, iou, BBox, Relation, RelationPolicy, NUM_RELATIONS};
pub use knn::{knn_query, knn_select, squared_distance, ImageBank, ImageGraph, Neighbor};
pub use spatial::{build_spatial_graph, build_spatial_graph_from_boxes, Edge, Region, SpatialGraph};
