//! Reference RMSE values for the synthetic PIV benchmark cases.

/// One benchmark case: directory name, published RMSE in pixels and the
/// embedding scale it was obtained with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkCase {
    pub name: &'static str,
    pub reference_rmse: f64,
    pub beta: f32,
}

const fn case(name: &'static str, reference_rmse: f64, beta: f32) -> BenchmarkCase {
    BenchmarkCase { name, reference_rmse, beta }
}

pub const CASES: [BenchmarkCase; 15] = [
    case("uniform", 0.044, 200.0),
    case("backstep_re800", 0.072, 100.0),
    case("backstep_re1000", 0.099, 100.0),
    case("backstep_re1200", 0.057, 100.0),
    case("backstep_re1500", 0.074, 100.0),
    case("cylinder_re40", 0.052, 50.0),
    case("cylinder_re150", 0.094, 50.0),
    case("cylinder_re200", 0.104, 50.0),
    case("cylinder_re300", 0.121, 50.0),
    case("cylinder_re400", 0.111, 50.0),
    case("dns_turbulence", 0.112, 10.0),
    case("sqg", 0.253, 20.0),
    case("jhtdb_channel", 0.087, 30.0),
    case("jhtdb_mhd1024", 0.150, 50.0),
    case("jhtdb_isotropic1024", 0.564, 20.0),
];

pub fn find(name: &str) -> Option<BenchmarkCase> {
    CASES.iter().copied().find(|c| c.name == name)
}
