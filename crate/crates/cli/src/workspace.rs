//! JSON workspace: named algebroids, Poisson manifolds, Poisson maps,
//! comorphisms and connections, validated at load time.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use algpaths::algebroid::LieAlgebroid;
use algpaths::comorph::Comorphism;
use algpaths::ehresmann::{ExampleConnection, FlatConnection};
use algpaths::expr::{default_names, parse, parse_in, Expr, MatrixMap, SmoothMap};
use algpaths::poisson::{cotangent_algebroid, poisson_map_residual, PoissonManifold, POISSON_MAP_TOL};

use crate::error::{CliError, CliResult};

/// Residual bound for the spot-checks run while loading.
pub const SPOT_CHECK_TOL: f64 = 1e-10;
pub const SPOT_CHECK_SAMPLES: usize = 10;
pub const SAMPLE_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub algebroids: Vec<AlgebroidSpec>,
    #[serde(default)]
    pub poisson: Vec<PoissonSpec>,
    #[serde(default)]
    pub poisson_maps: Vec<PoissonMapSpec>,
    #[serde(default)]
    pub comorphisms: Vec<ComorphismSpec>,
    #[serde(default)]
    pub connections: Vec<ConnectionSpec>,
}

/// Default numeric parameters; command-line flags take precedence.
#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub step: Option<f64>,
    pub bound: Option<f64>,
    pub horizon: Option<f64>,
    pub grid: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AlgebroidSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: AlgebroidKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AlgebroidKind {
    Tangent {
        tangent: usize,
        #[serde(default)]
        vars: Option<Vec<String>>,
        #[serde(default)]
        domain: Vec<String>,
    },
    Cotangent {
        cotangent: String,
    },
    LieAlgebra {
        /// `c[k][i][j] = c^k_{ij}`.
        lie_algebra: Vec<Vec<Vec<f64>>>,
        /// Optional matrix representation, one row-major matrix per basis
        /// element.
        #[serde(default)]
        matrix_basis: Option<Vec<Vec<Vec<f64>>>>,
    },
    Explicit {
        base_dim: usize,
        rank: usize,
        #[serde(default)]
        vars: Option<Vec<String>>,
        anchor: Vec<Vec<String>>,
        #[serde(default)]
        bracket: BTreeMap<String, String>,
        #[serde(default)]
        domain: Vec<String>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub vars: Option<Vec<String>>,
    #[serde(rename = "Pi", default)]
    pub pi: BTreeMap<String, String>,
    #[serde(default)]
    pub domain: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonMapSpec {
    pub name: String,
    pub source: String,
    pub target: String,
    pub phi: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ComorphismSpec {
    pub name: String,
    pub source: String,
    pub target: String,
    pub phi: Vec<String>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ConnectionKind {
    Explicit {
        #[serde(default)]
        vars: Option<Vec<String>>,
        phi: Vec<String>,
        #[serde(rename = "H")]
        h: Vec<Vec<String>>,
        #[serde(default)]
        domain: Vec<String>,
    },
    Example {
        example3: ExampleSpec,
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConnectionSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ConnectionKind,
}

/// The rotation-holonomy example; `nu` is an expression in `h`, `nu0` the
/// peak of the default bump profile.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleSpec {
    #[serde(default)]
    pub nu: Option<String>,
    #[serde(default)]
    pub nu0: Option<f64>,
}

pub struct PoissonMap {
    pub source: String,
    pub target: String,
    pub phi: SmoothMap,
}

/// A fully constructed and validated workspace.
#[derive(Default)]
pub struct Workspace {
    pub params: Params,
    pub algebroids: BTreeMap<String, Arc<LieAlgebroid>>,
    pub matrix_bases: BTreeMap<String, Vec<DMatrix<f64>>>,
    pub poisson: BTreeMap<String, PoissonManifold>,
    pub poisson_maps: BTreeMap<String, PoissonMap>,
    pub comorphisms: BTreeMap<String, Comorphism>,
    pub connections: BTreeMap<String, FlatConnection>,
}

/// Loading options: `spot_checks` runs the 10-sample axiom checks.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub seed: u64,
    pub spot_checks: bool,
}

/// Escape a JSON pointer reference token.
pub fn token(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", token(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", token(variant))),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn parse_config(text: &str) -> CliResult<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        CliError::config(pointer, e.into_inner())
    })
}

pub fn load_workspace(path: &Path, opts: LoadOptions) -> CliResult<Workspace> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        pointer: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    build(&parse_config(&text)?, opts)
}

fn exprs(src: &[String], vars: &[String], at: &str) -> CliResult<Vec<Expr>> {
    src.iter()
        .enumerate()
        .map(|(i, s)| parse(s, vars).map_err(|e| CliError::config(format!("{at}/{i}"), e)))
        .collect()
}

fn matrix(src: &[Vec<String>], vars: &[String], at: &str) -> CliResult<Vec<Vec<Expr>>> {
    src.iter()
        .enumerate()
        .map(|(i, row)| exprs(row, vars, &format!("{at}/{i}")))
        .collect()
}

/// `"i,j,..."` with 1-based indices in `1..=max`.
fn index_key(key: &str, arity: usize, max: usize, at: &str) -> CliResult<Vec<usize>> {
    let parts: Vec<&str> = key.split(',').map(str::trim).collect();
    if parts.len() != arity {
        return Err(CliError::config(at, format!("key \"{key}\" must have {arity} comma-separated indices")));
    }
    parts
        .iter()
        .map(|p| match p.parse::<usize>() {
            Ok(i) if (1..=max).contains(&i) => Ok(i - 1),
            _ => Err(CliError::config(at, format!("index \"{p}\" in key \"{key}\" is not in 1..={max}"))),
        })
        .collect()
}

fn vars_or_default(vars: &Option<Vec<String>>, n: usize, at: &str) -> CliResult<Vec<String>> {
    match vars {
        Some(v) if v.len() != n => Err(CliError::config(at, format!("expected {n} variable names, got {}", v.len()))),
        Some(v) => Ok(v.clone()),
        None => Ok(default_names("x", n)),
    }
}

fn build(cfg: &Config, opts: LoadOptions) -> CliResult<Workspace> {
    let mut ws = Workspace {
        params: cfg.params,
        ..Workspace::default()
    };
    let mut seen: HashMap<String, String> = HashMap::new();
    let mut claim = |name: &str, at: String| -> CliResult<()> {
        if let Some(prev) = seen.get(name) {
            return Err(CliError::config(at, format!("name \"{name}\" is already used at {prev}")));
        }
        seen.insert(name.to_string(), at);
        Ok(())
    };

    for (i, p) in cfg.poisson.iter().enumerate() {
        let at = format!("/poisson/{i}");
        claim(&p.name, format!("{at}/name"))?;
        let vars = vars_or_default(&p.vars, p.dim, &format!("{at}/vars"))?;
        let mut entries = BTreeMap::new();
        for (key, src) in &p.pi {
            let here = format!("{at}/Pi/{}", token(key));
            let ij = index_key(key, 2, p.dim, &here)?;
            if ij[0] >= ij[1] {
                return Err(CliError::config(here, format!("key \"{key}\" needs i < j")));
            }
            let e = parse(src, &vars).map_err(|e| CliError::config(&here, e))?;
            entries.insert((ij[0], ij[1]), e);
        }
        let domain = exprs(&p.domain, &vars, &format!("{at}/domain"))?;
        let pm = PoissonManifold::new(vars, &entries, domain).map_err(|e| CliError::config(&at, e))?;
        if opts.spot_checks {
            let pts = pm
                .sample_domain(opts.seed, SPOT_CHECK_SAMPLES, SAMPLE_RADIUS)
                .map_err(|e| CliError::config(&at, e))?;
            let r = pm.jacobi_residual(&pts).map_err(|e| CliError::config(&at, e))?;
            if r > SPOT_CHECK_TOL {
                return Err(CliError::config(at, format!("Jacobi residual {r:e} exceeds {SPOT_CHECK_TOL:e}")));
            }
        }
        ws.poisson.insert(p.name.clone(), pm);
    }

    for (i, a) in cfg.algebroids.iter().enumerate() {
        let at = format!("/algebroids/{i}");
        claim(&a.name, format!("{at}/name"))?;
        let alg = match &a.kind {
            AlgebroidKind::Tangent { tangent, vars, domain } => {
                let vars = vars_or_default(vars, *tangent, &format!("{at}/vars"))?;
                let domain = exprs(domain, &vars, &format!("{at}/domain"))?;
                LieAlgebroid::tangent_on(vars, domain)
            }
            AlgebroidKind::Cotangent { cotangent } => {
                let p = ws.poisson.get(cotangent).ok_or_else(|| {
                    CliError::config(format!("{at}/cotangent"), format!("unknown Poisson manifold \"{cotangent}\""))
                })?;
                cotangent_algebroid(p)
            }
            AlgebroidKind::LieAlgebra { lie_algebra, matrix_basis } => {
                let r = lie_algebra.len();
                if lie_algebra.iter().any(|m| m.len() != r || m.iter().any(|row| row.len() != r)) {
                    return Err(CliError::config(format!("{at}/lie_algebra"), format!("constants must be {r}x{r}x{r}")));
                }
                let alg = LieAlgebroid::lie_algebra(lie_algebra).map_err(|e| CliError::config(format!("{at}/lie_algebra"), e))?;
                if let Some(basis) = matrix_basis {
                    ws.matrix_bases.insert(a.name.clone(), matrices(basis, r, &format!("{at}/matrix_basis"))?);
                }
                alg
            }
            AlgebroidKind::Explicit {
                base_dim,
                rank,
                vars,
                anchor,
                bracket,
                domain,
            } => {
                let vars = vars_or_default(vars, *base_dim, &format!("{at}/vars"))?;
                let anchor = matrix(anchor, &vars, &format!("{at}/anchor"))?;
                let mut entries = BTreeMap::new();
                for (key, src) in bracket {
                    let here = format!("{at}/bracket/{}", token(key));
                    let cab = index_key(key, 3, *rank, &here)?;
                    if cab[1] >= cab[2] {
                        return Err(CliError::config(
                            here,
                            format!("bracket key \"{key}\" needs a < b; f^c_ba is implied by antisymmetry"),
                        ));
                    }
                    let e = parse(src, &vars).map_err(|e| CliError::config(&here, e))?;
                    entries.insert((cab[0], cab[1], cab[2]), e);
                }
                let domain = exprs(domain, &vars, &format!("{at}/domain"))?;
                LieAlgebroid::new(vars, anchor, *rank, &entries, domain).map_err(|e| CliError::config(&at, e))?
            }
        };
        if opts.spot_checks {
            let pts = alg
                .sample_domain(opts.seed, SPOT_CHECK_SAMPLES, SAMPLE_RADIUS)
                .map_err(|e| CliError::config(&at, e))?;
            let r = alg.check_axioms(&pts).map_err(|e| CliError::config(&at, e))?;
            if r.max() > SPOT_CHECK_TOL {
                return Err(CliError::config(
                    at,
                    format!(
                        "axiom residuals exceed {SPOT_CHECK_TOL:e}: anchor morphism {:e}, Jacobi {:e}",
                        r.anchor_morphism, r.jacobi
                    ),
                ));
            }
        }
        ws.algebroids.insert(a.name.clone(), Arc::new(alg));
    }

    for (i, m) in cfg.poisson_maps.iter().enumerate() {
        let at = format!("/poisson_maps/{i}");
        claim(&m.name, format!("{at}/name"))?;
        let px = lookup(&ws.poisson, &m.source, &format!("{at}/source"), "Poisson manifold")?;
        let py = lookup(&ws.poisson, &m.target, &format!("{at}/target"), "Poisson manifold")?;
        if m.phi.len() != py.dim() {
            return Err(CliError::config(format!("{at}/phi"), format!("expected {} components", py.dim())));
        }
        let comps = exprs(&m.phi, px.vars(), &format!("{at}/phi"))?;
        let phi = SmoothMap::new(px.vars().to_vec(), comps, px.domain().to_vec());
        if opts.spot_checks {
            let pts = px
                .sample_domain(opts.seed, SPOT_CHECK_SAMPLES, SAMPLE_RADIUS)
                .map_err(|e| CliError::config(&at, e))?;
            let (r, _) = poisson_map_residual(&phi, px, py, &pts).map_err(|e| CliError::config(&at, e))?;
            if r > POISSON_MAP_TOL {
                return Err(CliError::config(at, format!("not a Poisson map: residual {r:e} exceeds {POISSON_MAP_TOL:e}")));
            }
        }
        ws.poisson_maps.insert(
            m.name.clone(),
            PoissonMap {
                source: m.source.clone(),
                target: m.target.clone(),
                phi,
            },
        );
    }

    for (i, c) in cfg.connections.iter().enumerate() {
        let at = format!("/connections/{i}");
        claim(&c.name, format!("{at}/name"))?;
        let conn = match &c.kind {
            ConnectionKind::Explicit { vars, phi, h, domain } => {
                let n = h.len();
                let vars = vars_or_default(vars, n, &format!("{at}/vars"))?;
                let domain = exprs(domain, &vars, &format!("{at}/domain"))?;
                let comps = exprs(phi, &vars, &format!("{at}/phi"))?;
                let h = matrix(h, &vars, &format!("{at}/H"))?;
                let phi = SmoothMap::new(vars.clone(), comps, domain.clone());
                let h = MatrixMap::from_entries(vars, h, domain);
                FlatConnection::new(phi, h).map_err(|e| CliError::config(&at, e))?
            }
            ConnectionKind::Example { example3 } => example_connection(example3, &format!("{at}/example3"))?.connection().clone(),
        };
        let tx = LieAlgebroid::tangent_on(conn.phi().vars().to_vec(), conn.phi().domain().to_vec());
        let pts = tx
            .sample_domain(opts.seed, SPOT_CHECK_SAMPLES, SAMPLE_RADIUS)
            .map_err(|e| CliError::config(&at, e))?;
        let comorph = conn.as_comorphism(&pts).map_err(|e| CliError::config(&at, e))?;
        if opts.spot_checks {
            let r = conn.flatness_residual(&pts).map_err(|e| CliError::config(&at, e))?;
            if r > SPOT_CHECK_TOL {
                return Err(CliError::config(at, format!("curvature {r:e} exceeds {SPOT_CHECK_TOL:e}")));
            }
        }
        ws.comorphisms.insert(c.name.clone(), comorph);
        ws.connections.insert(c.name.clone(), conn);
    }

    for (i, c) in cfg.comorphisms.iter().enumerate() {
        let at = format!("/comorphisms/{i}");
        claim(&c.name, format!("{at}/name"))?;
        let a = lookup(&ws.algebroids, &c.source, &format!("{at}/source"), "algebroid")?.clone();
        let b = lookup(&ws.algebroids, &c.target, &format!("{at}/target"), "algebroid")?.clone();
        if c.phi.len() != b.base_dim() {
            return Err(CliError::config(format!("{at}/phi"), format!("expected {} components", b.base_dim())));
        }
        let phi = SmoothMap::new(a.vars().to_vec(), exprs(&c.phi, a.vars(), &format!("{at}/phi"))?, Vec::new());
        let entries = matrix(&c.m, a.vars(), &format!("{at}/M"))?;
        if entries.len() != a.rank() || entries.iter().any(|r| r.len() != b.rank()) {
            return Err(CliError::config(format!("{at}/M"), format!("M must be {}x{}", a.rank(), b.rank())));
        }
        let m = MatrixMap::from_entries(a.vars().to_vec(), entries, Vec::new());
        let comorph = Comorphism::new(a.clone(), b, phi, m).map_err(|e| CliError::config(&at, e))?;
        if opts.spot_checks {
            let pts = a
                .sample_domain(opts.seed, SPOT_CHECK_SAMPLES, SAMPLE_RADIUS)
                .map_err(|e| CliError::config(&at, e))?;
            if let Some((x, y)) = comorph.image_violation(&pts).map_err(|e| CliError::config(&at, e))? {
                return Err(CliError::config(at, format!("φ({x:?}) = {y:?} lies outside the target domain")));
            }
            let r = comorph.anchor_compat_residual(&pts).map_err(|e| CliError::config(&at, e))?;
            if r > SPOT_CHECK_TOL {
                return Err(CliError::config(at, format!("anchor compatibility residual {r:e} exceeds {SPOT_CHECK_TOL:e}")));
            }
        }
        ws.comorphisms.insert(c.name.clone(), comorph);
    }
    Ok(ws)
}

fn matrices(src: &[Vec<Vec<f64>>], count: usize, at: &str) -> CliResult<Vec<DMatrix<f64>>> {
    if src.len() != count {
        return Err(CliError::config(at, format!("expected {count} matrices, got {}", src.len())));
    }
    src.iter()
        .enumerate()
        .map(|(i, rows)| {
            let m = rows.len();
            if m == 0 || rows.iter().any(|r| r.len() != m) {
                return Err(CliError::config(format!("{at}/{i}"), "matrix must be square and non-empty"));
            }
            Ok(DMatrix::from_row_slice(m, m, &rows.concat()))
        })
        .collect()
}

pub fn example_connection(spec: &ExampleSpec, at: &str) -> CliResult<ExampleConnection> {
    match (&spec.nu, spec.nu0) {
        (Some(nu), None) => {
            let e = parse_in(nu, &["h"]).map_err(|e| CliError::config(format!("{at}/nu"), e))?;
            Ok(ExampleConnection::new(e))
        }
        (None, Some(nu0)) => Ok(ExampleConnection::with_profile(nu0)),
        _ => Err(CliError::config(at, "give exactly one of \"nu\" or \"nu0\"")),
    }
}

fn lookup<'a, T>(map: &'a BTreeMap<String, T>, name: &str, at: &str, what: &str) -> CliResult<&'a T> {
    map.get(name)
        .ok_or_else(|| CliError::config(at, format!("unknown {what} \"{name}\"")))
}

impl Workspace {
    fn get<'a, T>(map: &'a BTreeMap<String, T>, name: &str, what: &str) -> CliResult<&'a T> {
        map.get(name).ok_or_else(|| {
            let known: Vec<&str> = map.keys().map(String::as_str).collect();
            CliError::usage(format!("unknown {what} \"{name}\" (known: {})", known.join(", ")))
        })
    }

    pub fn algebroid(&self, name: &str) -> CliResult<&Arc<LieAlgebroid>> {
        Self::get(&self.algebroids, name, "algebroid")
    }

    pub fn comorphism(&self, name: &str) -> CliResult<&Comorphism> {
        Self::get(&self.comorphisms, name, "comorphism")
    }

    pub fn poisson_manifold(&self, name: &str) -> CliResult<&PoissonManifold> {
        Self::get(&self.poisson, name, "Poisson manifold")
    }

    pub fn poisson_map(&self, name: &str) -> CliResult<&PoissonMap> {
        Self::get(&self.poisson_maps, name, "Poisson map")
    }

    pub fn matrix_basis(&self, name: &str) -> CliResult<&[DMatrix<f64>]> {
        Self::get(&self.matrix_bases, name, "matrix basis").map(Vec::as_slice)
    }
}
