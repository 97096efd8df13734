use std::io::Write;

use ntkms_core::coeff::{CoeffMonomial, CoefficientElement, Engine, TraceSpec};
use ntkms_core::dsl::parse_element;
use ntkms_core::fock::{check_nica_covariance, check_representation, check_toeplitz_relation, TruncatedFock};
use ntkms_core::kms::{ground_state, KmsContext, KmsParameters, StateValue};
use ntkms_core::nt::{NicaToeplitz, NtElement};
use ntkms_core::product_system::ProductSystem;
use ntkms_core::semigroup::{GrowthLaw, SemigroupElement, SemigroupKind};
use ntkms_core::verify::{
    check_commutation, check_core_trace, check_euler, check_ground, check_ground_limit, check_inclusion_exclusion,
    check_kms, check_reconstruction, check_scaling_identity, check_structure, CheckReport, ReconstructionContext,
    Sampler,
};
use serde_json::{json, Map};

use crate::config::{Format, RunConfig, Style, SystemName};
use crate::error::AppError;
use crate::output;
use crate::Suite;

pub const DEFAULT_SAMPLES: usize = 200;
const SAMPLE_FIBER: u64 = 4;
const SCALING_FIBER: u64 = 6;
const DEFAULT_PRIMES: u64 = 100;
const DEFAULT_CUTOFF: u64 = 23;
const SMALL_CUTOFF: u64 = 7;
const EULER_ZETA_BOUND: u64 = 100_000;
const LIMIT_BETA: f64 = 20.0;
const LIMIT_TOLERANCE: f64 = 1e-4;
const FOCK_FIBER: u64 = 5;
const REPRESENTATION_FIBER: u64 = 2;

fn context(cfg: &RunConfig) -> Result<(ProductSystem, NicaToeplitz), AppError> {
    let sys = cfg.build_system()?;
    let budget = usize::try_from(cfg.budget).unwrap_or(usize::MAX);
    let nt = NicaToeplitz::new(sys.clone()).with_budget(budget);
    Ok((sys, nt))
}

fn kms_context(sys: &ProductSystem, trace: &TraceSpec, beta: f64, bound: u64) -> Result<KmsContext, AppError> {
    let params = KmsParameters::standard(sys, beta, bound, trace.clone())?;
    Ok(KmsContext::new(sys, params)?)
}

pub fn eval(cfg: &RunConfig, expression: &str, ground: bool, out: &mut impl Write) -> Result<(), AppError> {
    let (sys, nt) = context(cfg)?;
    let x = parse_element(expression, &nt)?;
    let trace = cfg.build_trace(&sys)?;
    let value = if ground {
        StateValue::exact(ground_state(&x, &trace)?, 0)
    } else {
        kms_context(&sys, &trace, cfg.beta(), cfg.bound)?.kms_state(&x)?
    };
    output::state(out, cfg.format, &value)
}

pub fn parse(cfg: &RunConfig, expression: &str, out: &mut impl Write) -> Result<(), AppError> {
    let (_, nt) = context(cfg)?;
    let x = parse_element(expression, &nt)?;
    output::line(out, &x.to_string())
}

fn observable(spec: &str) -> (String, &str) {
    match spec.split_once('=') {
        Some((name, expr)) => (name.trim().to_string(), expr),
        None => (spec.trim().to_string(), spec),
    }
}

pub fn sweep(cfg: &RunConfig, observables: &[String], out: &mut impl Write) -> Result<(), AppError> {
    let (sys, nt) = context(cfg)?;
    let default = ["1".to_string()];
    let specs = if observables.is_empty() { &default[..] } else { observables };
    let mut obs: Vec<(String, NtElement)> = Vec::new();
    for spec in specs {
        let (name, expr) = observable(spec);
        obs.push((name, parse_element(expr, &nt)?));
    }
    let trace = cfg.build_trace(&sys)?;
    let contexts = cfg
        .grid()
        .into_iter()
        .map(|b| kms_context(&sys, &trace, b, cfg.bound))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows: Vec<(f64, StateValue, Vec<StateValue>)> = Vec::new();
    for ctx in &contexts {
        let values = obs
            .iter()
            .map(|(_, y)| ctx.kms_state(y))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((ctx.params().beta, ctx.zeta(), values));
    }
    match cfg.format {
        Format::Json => {
            for (beta, zeta, values) in &rows {
                let mut m = Map::new();
                for ((name, _), v) in obs.iter().zip(values) {
                    m.insert(name.clone(), serde_json::to_value(v).expect("state serializes"));
                }
                let row = json!({"beta": beta, "zeta": zeta, "observables": m});
                output::line(out, &row.to_string())?;
            }
            Ok(())
        }
        Format::Csv => {
            let mut w = output::csv_writer(out);
            let mut header = vec!["beta".to_string(), "zeta".into(), "zeta_tail".into()];
            for (name, _) in &obs {
                header.push(name.clone());
                header.push(format!("{name}_tail"));
            }
            output::csv_row(&mut w, &header)?;
            for (beta, zeta, values) in &rows {
                let mut row = vec![output::real(*beta), output::complex(zeta.value), output::real(zeta.tail)];
                for v in values {
                    row.push(output::complex(v.value));
                    row.push(output::real(v.tail));
                }
                output::csv_row(&mut w, &row)?;
            }
            output::finish_csv(w)
        }
    }
}

pub fn systems(format: Format, out: &mut impl Write) -> Result<(), AppError> {
    let builtins = [
        (SystemName::AffineToeplitz, None, None, None),
        (SystemName::AdditiveToeplitz, None, None, None),
        (SystemName::Cuntz, Some(2), None, None),
        (SystemName::LatticeDilation, None, Some(1), Some(Style::Diagonal)),
        (SystemName::LatticeDilation, None, Some(2), Some(Style::Diagonal)),
        (SystemName::LatticeDilation, None, Some(2), Some(Style::FirstAxis)),
    ];
    let mut rows = Vec::new();
    for (system, k, d, style) in builtins {
        let cfg = RunConfig {
            system,
            k,
            d,
            style,
            ..RunConfig::default()
        };
        let sys = cfg.base_system()?;
        let critical = sys.critical_exponent(&sys.default_scaling()).map_err(AppError::usage)?;
        let mut c = json!({ "system": system });
        if let Some(k) = k {
            c["k"] = json!(k);
        }
        if let (Some(d), Some(style)) = (d, style) {
            c["d"] = json!(d);
            c["style"] = json!(style);
        }
        rows.push((sys.name(), c, sys.semigroup().to_string(), sys.engine().to_string(), critical));
    }
    match format {
        Format::Json => {
            for (name, c, semigroup, engine, critical) in rows {
                let row = json!({
                    "name": name,
                    "config": c,
                    "semigroup": semigroup,
                    "engine": engine,
                    "critical_exponent": critical,
                });
                output::line(out, &row.to_string())?;
            }
            Ok(())
        }
        Format::Csv => {
            let mut w = output::csv_writer(out);
            output::csv_row(
                &mut w,
                &["name".into(), "semigroup".into(), "engine".into(), "critical_exponent".into()],
            )?;
            for (name, _, semigroup, engine, critical) in rows {
                output::csv_row(&mut w, &[name, semigroup, engine, output::real(critical)])?;
            }
            output::finish_csv(w)
        }
    }
}

struct Verifier<'a> {
    cfg: &'a RunConfig,
    sys: ProductSystem,
    nt: NicaToeplitz,
    trace: TraceSpec,
    primes: Option<u64>,
    samples: usize,
}

impl Verifier<'_> {
    fn kms(&self) -> Result<KmsContext, AppError> {
        kms_context(&self.sys, &self.trace, self.cfg.beta(), self.cfg.bound)
    }

    fn sampler(&self) -> Result<Sampler, AppError> {
        Ok(Sampler::new(&self.sys, self.cfg.seed, SAMPLE_FIBER)?)
    }

    fn fibers(&self, bound: u64) -> Result<Vec<SemigroupElement>, AppError> {
        let t = self.sys.semigroup().enumerate(bound).map_err(AppError::usage)?;
        Ok(t.elements().to_vec())
    }

    /// Fibers grow faster than `N_s = s`, so exhaustive work is cut back.
    fn fast_growth(&self) -> bool {
        match self.sys.basis_growth() {
            GrowthLaw::Power { exponent } => exponent > 1.0,
            GrowthLaw::Exponential { .. } => true,
        }
    }

    fn structure(&self) -> Result<Vec<CheckReport>, AppError> {
        let bound = if self.fast_growth() { 6 } else { 12 };
        Ok(check_structure(&self.sys, bound)?)
    }

    fn kms_suite(&self) -> Result<Vec<CheckReport>, AppError> {
        let kms = self.kms()?;
        let condition = check_kms(&kms, &self.nt, &mut self.sampler()?, self.samples)?;
        let scaling = check_scaling_identity(
            &kms,
            &self.nt,
            &self.fibers(SCALING_FIBER)?,
            &self.sys.default_generators(),
        )?;
        Ok(vec![condition, scaling])
    }

    fn trace_suite(&self) -> Result<Vec<CheckReport>, AppError> {
        let kms = self.kms()?;
        Ok(vec![check_core_trace(&kms, &self.nt, &mut self.sampler()?, self.samples)?])
    }

    fn ground_suite(&self) -> Result<Vec<CheckReport>, AppError> {
        let ground = check_ground(&self.trace, &self.nt, &mut self.sampler()?, self.samples)?;
        let limit = check_ground_limit(
            &self.sys,
            &self.trace,
            &self.limit_observables()?,
            &[LIMIT_BETA],
            self.cfg.bound,
            LIMIT_TOLERANCE,
        )?;
        Ok(vec![ground, limit])
    }

    /// Ten fixed core monomials `i_s(1_j) i_s(1_k)*` over small fibers.
    fn limit_observables(&self) -> Result<Vec<NtElement>, AppError> {
        let mut ys = vec![self.nt.unit()];
        for s in self.fibers(SAMPLE_FIBER)? {
            let n = self.sys.basis_count(s).map_err(AppError::usage)?;
            for (j, k) in [(0, 0), (n - 1, 0), (n - 1, n - 1)] {
                if ys.len() == 10 {
                    return Ok(ys);
                }
                let y = self.nt.basis_term(s, j, s, k)?;
                if !ys.contains(&y) {
                    ys.push(y);
                }
            }
        }
        Ok(ys)
    }

    fn reconstruction_monomials(&self) -> Vec<CoeffMonomial> {
        match self.sys.engine() {
            Engine::Toeplitz => [(1, 0), (0, 1), (2, 0), (3, 1), (0, 6), (12, 0), (0, 0)]
                .into_iter()
                .map(|(m, n)| CoeffMonomial::Toeplitz { m, n })
                .collect(),
            Engine::Laurent { dim } => [1i64, -2, 6, 0]
                .into_iter()
                .map(|k| {
                    let mut g = vec![0; dim];
                    g[0] = k;
                    CoeffMonomial::Laurent(g)
                })
                .collect(),
            Engine::Scalar => vec![CoeffMonomial::Unit],
        }
    }

    fn reconstruct_suite(&self) -> Result<Vec<CheckReport>, AppError> {
        let kms = self.kms()?;
        let cutoff = match self.sys.semigroup() {
            SemigroupKind::NatMult if self.fast_growth() => self.primes.unwrap_or(SMALL_CUTOFF),
            SemigroupKind::NatMult => self.primes.unwrap_or(DEFAULT_CUTOFF),
            SemigroupKind::NatAdd => 1,
        };
        let mut out = Vec::new();
        for a in self.reconstruction_monomials() {
            let label = CoefficientElement::monomial(self.sys.engine(), a.clone(), 1.0.into()).to_string();
            let ctx = ReconstructionContext::new(
                &self.sys,
                self.cfg.beta(),
                self.trace.clone(),
                a,
                kms.params().truncation.clone(),
                Some(cutoff),
            )?;
            if !ctx.primes.is_empty() {
                out.push(check_inclusion_exclusion(&ctx, &self.sys)?.with_detail("a", json!(label)));
            }
            out.push(check_reconstruction(&ctx, &self.nt, &kms)?.with_detail("a", json!(label)));
        }
        if self.sys.semigroup() == SemigroupKind::NatMult && self.sys.engine() == Engine::Toeplitz {
            let generators = [CoefficientElement::toeplitz(1, 0), CoefficientElement::toeplitz(0, 1)];
            out.push(check_commutation(&self.nt, &generators, &self.fibers(SCALING_FIBER)?)?);
        }
        Ok(out)
    }

    fn euler_applies(&self) -> bool {
        self.sys.semigroup() == SemigroupKind::NatMult && matches!(self.sys.basis_growth(), GrowthLaw::Power { .. })
    }

    fn euler_suite(&self) -> Result<Vec<CheckReport>, AppError> {
        let primes = self.primes.unwrap_or(DEFAULT_PRIMES);
        Ok(vec![check_euler(&self.sys, self.cfg.beta(), primes, EULER_ZETA_BOUND)?])
    }

    fn fock_suite(&self) -> Result<Vec<CheckReport>, AppError> {
        let fibers = self.fibers(FOCK_FIBER)?;
        let fock = TruncatedFock::build(&self.sys, &fibers).map_err(AppError::usage)?;
        let mut sampler = self.sampler()?;
        let mut out = vec![
            check_representation(&fock, &self.nt, &mut sampler, self.samples, REPRESENTATION_FIBER)?,
            check_nica_covariance(&fock, &mut sampler, self.samples)?,
        ];
        for &s in &fibers[1..] {
            out.push(check_toeplitz_relation(&fock, s)?.with_detail("s", json!(s.value())));
        }
        Ok(out)
    }
}

pub fn verify(
    cfg: &RunConfig,
    suite: Suite,
    primes: Option<u64>,
    samples: usize,
    out: &mut impl Write,
    err: &mut impl Write,
) -> Result<(), AppError> {
    let (sys, nt) = context(cfg)?;
    let trace = cfg.build_trace(&sys)?;
    let v = Verifier {
        cfg,
        sys,
        nt,
        trace,
        primes,
        samples,
    };
    let selected: Vec<Suite> = match suite {
        Suite::All => vec![
            Suite::Structure,
            Suite::Kms,
            Suite::Trace,
            Suite::Ground,
            Suite::Reconstruct,
            Suite::Euler,
            Suite::Fock,
        ],
        s => vec![s],
    };
    let explicit = suite != Suite::All;
    if cfg.format == Format::Csv {
        output::csv_line(out, &output::REPORT_COLUMNS.map(String::from))?;
    }
    let mut reports: Vec<CheckReport> = Vec::new();
    for s in selected {
        let applies = match s {
            Suite::Euler => v.euler_applies(),
            Suite::Fock => v.sys.engine() == Engine::Scalar,
            _ => true,
        };
        if !applies {
            if explicit {
                return Err(AppError::Usage(format!("suite {s:?} does not apply to {}", v.sys.name())));
            }
            writeln!(err, "skipping {s:?}: not applicable to {}", v.sys.name()).ok();
            continue;
        }
        let batch = match s {
            Suite::Structure => v.structure()?,
            Suite::Kms => v.kms_suite()?,
            Suite::Trace => v.trace_suite()?,
            Suite::Ground => v.ground_suite()?,
            Suite::Reconstruct => v.reconstruct_suite()?,
            Suite::Euler => v.euler_suite()?,
            Suite::Fock => v.fock_suite()?,
            Suite::All => unreachable!(),
        };
        for r in batch {
            match cfg.format {
                Format::Csv => output::csv_line(out, &output::report_row(&r))?,
                Format::Json => output::line(out, &r.to_json_line())?,
            }
            reports.push(r);
        }
    }
    output::summary(err, &reports)?;
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(AppError::Failed)
    }
}
