//! Quote filtering, forward extraction, knot selection, and spline/linear-wing total-variance surfaces.

pub mod fit;
pub mod quotes;
pub mod spline;

pub use fit::{
    clamp_left_slope, clamp_right_slope, evaluate_surface, exact_wing_bound, fit_surface, prepare_slice, left_slope_bound, printed_beta_max, printed_beta_min, right_slope_bound,
    select_knots, KnotSelection, PreparedSurface, SurfacePoint,
};
pub use quotes::{
    build_slice, extract_forward, filter_quotes, select_tenors, tenor_between, DayCount, FilterOutcome, FilterRules, OptionSlice,
    RateCurve, RawQuote, SliceWarning, TenorStats, weekdays_between,
};
pub use spline::NaturalSpline;
