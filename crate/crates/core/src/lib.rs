//! Plane-geometry diagram synthesis from a small constraint language.
//!
//! A scene description is parsed into a [`SceneSpec`], turned into a
//! parameterised [`Configuration`], and optimized so that every constraint
//! loss vanishes. The result can be rasterized through the scene's distance
//! field and measured to read off answers.
//!
//! ```
//! use diagram_sdf::{parse_spec, batch_optimize, OptimizerConfig, CrowdPolicy};
//!
//! let spec = parse_spec("point A B\nsegment A B\nconstraint equal length(A,B) 1").unwrap();
//! let report = batch_optimize(&spec, 2, 0, &OptimizerConfig::default(), CrowdPolicy::default()).unwrap();
//! assert!(report.best().is_some());
//! ```

pub mod autodiff;
pub mod constraints;
pub mod dsl;
pub mod font;
pub mod geom;
pub mod measure;
pub mod optimizer;
pub mod renderer;
pub mod scene;
pub mod sdf;

pub use constraints::{
    bind_terms, check_gradients, total_loss, BindError, ConstraintTerm, CrowdPolicy, GradientCheck,
    LossReport,
};
pub use dsl::{parse_spec, serialize_spec, validate_spec, Diagnostic, SceneSpec, Severity};
pub use measure::{answer_choice, answer_completion, measure_all, verify, VerificationReport};
pub use optimizer::{batch_optimize, optimize, BatchReport, Method, OptimizeResult, OptimizerConfig};
pub use renderer::{
    auto_viewport, extract_isosurface, render_image, sample_grid, Annotations, FieldGrid, Mask,
    RasterImage, Style, Viewport,
};
pub use scene::{build_scene, Configuration, ParamVector, Snapshot};
pub use sdf::{sdf_circle, sdf_line, sdf_point, sdf_scene, sdf_segment};
