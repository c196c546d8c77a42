//! Runs the analysis stages over a configured dataset and writes a report
//! directory. Per-day work fans out across threads; files are written in
//! date order so reruns are byte-identical.

pub mod config;
pub mod output;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;

pub use config::{AmmCase, InputSpec, PipelineConfig};
pub use output::{Failure, OutDir, Table, FIGURES, MANIFEST};

use crate::concentration::{
    builder_shares, herfindahl_variants, mev_block_share, mev_share_daily, validator_revenue,
};
use crate::dataset::{load_dataset, DayData, Dataset};
use crate::effects::{
    average_marginal_effects, marginal_effect_discrete, nearest_rank, quantile_marginal_effects,
    reordering_insurance, InsuranceRule,
};
use crate::error::{Error, Result};
use crate::position::{build_design_rows, Bucketing, DesignRows, DesignSpec};
use crate::probit::{fit_ordered_probit, write_fit_report, ProbitData, ProbitFit};
use crate::reduce::{par_map, sum_by};
use crate::sandwich::{
    amm_counterfactual, backrun_gas_test, detect_sandwiches_heuristic, filter_high_effects,
    fit_effect_regression, join_sandwiches, position_displacement, Candidate, EffectObservation,
    EnrichedSandwich, JoinResult, Leg,
};
use crate::stats::{skewness_ci, skewness_reduction_test, OlsFit, SkewnessCi, SkewnessReduction};
use crate::synth::{day_seed, splitmix64, write_bundle};
use crate::types::{BlockMeta, DateWindow, SandwichRecord, TxRecord};
use crate::validate::validate_dataset;
use output::{coef, eth, fixed, gas, opt, prob, pval, stat, usd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    IngestCheck,
    Fit,
    Effects,
    Insurance,
    Sandwich,
    Concentration,
    Synth,
    /// Every analysis stage in one run.
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::IngestCheck,
        Stage::Fit,
        Stage::Effects,
        Stage::Insurance,
        Stage::Sandwich,
        Stage::Concentration,
        Stage::Synth,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::IngestCheck => "ingest-check",
            Stage::Fit => "fit",
            Stage::Effects => "effects",
            Stage::Insurance => "insurance",
            Stage::Sandwich => "sandwich",
            Stage::Concentration => "concentration",
            Stage::Synth => "synth",
            Stage::Report => "report",
        }
    }

    fn uses_model(self) -> bool {
        matches!(self, Stage::Fit | Stage::Effects | Stage::Insurance)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    /// Data rows per file in the output directory.
    pub files: BTreeMap<String, usize>,
    pub failures: Vec<Failure>,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every analysis stage.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    run_stages(cfg, &[Stage::Report])
}

fn failure(stage: Stage, date: Option<NaiveDate>, message: impl Into<String>) -> Failure {
    Failure {
        stage: stage.as_str().into(),
        date,
        message: message.into(),
    }
}

/// Runs the given stages. Configuration and input errors abort the run;
/// failures of a single day or stage are recorded in the returned summary
/// and in the manifest, and the run continues.
pub fn run_stages(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunSummary> {
    let mut set: BTreeSet<Stage> = BTreeSet::new();
    let mut optional_sandwich = false;
    for s in stages {
        if *s == Stage::Report {
            set.extend([Stage::IngestCheck, Stage::Fit, Stage::Effects, Stage::Insurance, Stage::Concentration]);
            optional_sandwich = true;
        } else {
            set.insert(*s);
        }
    }
    let has_sandwiches = cfg.inputs.sandwiches.is_some();
    if cfg.model.extended && !has_sandwiches && set.iter().any(|s| s.uses_model()) {
        return Err(Error::Config(
            "the extended model needs inputs.sandwiches (the sandwich record file)".into(),
        ));
    }
    if set.contains(&Stage::Sandwich) && !has_sandwiches {
        return Err(Error::Config(
            "the sandwich stage needs inputs.sandwiches (the sandwich record file)".into(),
        ));
    }
    let mut failures = Vec::new();
    if optional_sandwich {
        if has_sandwiches {
            set.insert(Stage::Sandwich);
        } else {
            failures.push(failure(Stage::Sandwich, None, "skipped: inputs.sandwiches is not configured"));
        }
    }

    let out = OutDir::create(&cfg.output_path())?;
    if set.contains(&Stage::Synth) {
        run_synth(cfg, &out)?;
    }
    if set.iter().any(|s| *s != Stage::Synth) {
        let ds = load_dataset(&cfg.ingest()?)?;
        let days = ds.days(|d| cfg.includes(d));
        let ctx = Ctx {
            cfg,
            ds: &ds,
            days: &days,
            out: &out,
        };
        if set.contains(&Stage::IngestCheck) {
            ctx.ingest_check()?;
        }
        let needs_model = set.iter().any(|s| s.uses_model());
        if days.is_empty() && (needs_model || set.contains(&Stage::Sandwich)) {
            failures.push(failure(Stage::Fit, None, "no transactions in the window"));
        }
        let models = if needs_model {
            ctx.models(cfg.design_spec(cfg.model.extended))
        } else {
            Vec::new()
        };
        if set.contains(&Stage::Fit) {
            ctx.fits(&models, &mut failures)?;
        }
        if set.contains(&Stage::Effects) {
            ctx.effects(&models, &mut failures)?;
        }
        if set.contains(&Stage::Insurance) {
            ctx.insurance(&models, &mut failures)?;
        }
        if set.contains(&Stage::Sandwich) {
            let ext_owned;
            let ext: &[DayModel] = if cfg.model.extended && needs_model {
                &models
            } else {
                ext_owned = ctx.models(cfg.design_spec(true));
                &ext_owned
            };
            ctx.sandwich(ext, &mut failures)?;
        }
        if set.contains(&Stage::Concentration) {
            ctx.concentration()?;
        }
    }
    let names: Vec<&str> = set.iter().map(|s| s.as_str()).collect();
    let hash = cfg.hash();
    let files = output::write_manifest(&out, &hash, &names, &failures)?;
    Ok(RunSummary {
        out_dir: out.root.clone(),
        config_hash: hash,
        files,
        failures,
    })
}

/// Writes a synthetic bundle into the output directory together with a
/// `pipeline.toml` that analyses it into `report/`.
fn run_synth(cfg: &PipelineConfig, out: &OutDir) -> Result<()> {
    write_bundle(&cfg.synth, &out.root)?;
    let bundle_cfg = cfg.for_bundle();
    let text = format!(
        "# analysis of the synthetic bundle in this directory\noutput_dir = \"report\"\n{}",
        bundle_cfg.to_toml()
    );
    out.write_bytes("pipeline.toml", text.as_bytes())
}

struct DayModel {
    date: NaiveDate,
    spec: DesignSpec,
    design: DesignRows,
    data: ProbitData,
    fit: std::result::Result<ProbitFit, String>,
}

impl DayModel {
    fn fit(&self) -> Result<&ProbitFit> {
        self.fit
            .as_ref()
            .map_err(|e| Error::Inference(format!("model fit failed: {e}")))
    }
}

fn bucket_name(b: Bucketing) -> &'static str {
    match b {
        Bucketing::Quartiles => "quartile",
        Bucketing::Deciles => "decile",
    }
}

fn file_name(stem: &str, spec: DesignSpec, date: NaiveDate, ext: &str) -> String {
    let tag = if spec.extended { "ext_" } else { "" };
    format!("{stem}_{tag}{}.{ext}", date.format("%Y%m%d"))
}

fn date_str(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

/// Stream seed for one purpose on one day.
fn stream_seed(seed: u64, date: NaiveDate, purpose: u64) -> u64 {
    splitmix64(day_seed(seed, date) ^ purpose)
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    ds: &'a Dataset,
    days: &'a [DayData],
    out: &'a OutDir,
}

impl Ctx<'_> {
    fn models(&self, spec: DesignSpec) -> Vec<DayModel> {
        par_map(self.days, |day| {
            let design = build_design_rows(day, &self.ds.mempool, &self.ds.labels, &self.ds.sandwiches, spec);
            let data = ProbitData::from_design(&design.rows, spec);
            let fit = fit_ordered_probit(&data, &self.cfg.model.fit).map_err(|e| e.to_string());
            DayModel {
                date: day.date,
                spec,
                design,
                data,
                fit,
            }
        })
    }

    fn ingest_check(&self) -> Result<()> {
        let ds = self.ds;
        let report = validate_dataset(&ds.txs, &ds.blocks);
        let mut s = String::new();
        let _ = writeln!(s, "# ingest check");
        let _ = writeln!(s, "[sources]");
        for (name, st) in &ds.stats {
            let _ = writeln!(
                s,
                "{name} rows={} emitted={} skipped={} merged={}",
                st.rows, st.emitted, st.skipped, st.merged
            );
        }
        let _ = writeln!(s, "[validation]");
        let _ = writeln!(s, "transactions = {}", report.n_txs);
        let _ = writeln!(s, "blocks = {}", report.n_blocks);
        let _ = writeln!(s, "index_gaps = {}", report.index_gaps.len());
        let _ = writeln!(s, "duplicate_hashes = {}", report.duplicate_hashes.len());
        let _ = writeln!(s, "fee_violations = {}", report.fee_violations.len());
        let _ = writeln!(s, "orphan_txs = {}", report.orphan_txs);
        let _ = writeln!(s, "clean = {}", report.is_clean());
        let _ = writeln!(s, "mempool_join_rate = {}", fixed(ds.mempool_join_rate(), 6));
        for g in report.index_gaps.iter().take(20) {
            let _ = writeln!(
                s,
                "gap block={} expected={} present={} missing={} duplicated={}",
                g.block_number,
                g.expected,
                g.present,
                g.missing.len(),
                g.duplicated.len()
            );
        }
        let _ = writeln!(s, "[days]");
        for d in self.days {
            let _ = writeln!(s, "{} blocks={} txs={}", date_str(d.date), d.blocks.len(), d.tx_count());
        }
        let _ = writeln!(s, "[excluded]");
        for d in &self.cfg.window.exclude {
            let _ = writeln!(s, "{}", date_str(*d));
        }
        self.out.write_bytes("ingest_check.txt", s.as_bytes())
    }

    fn fits(&self, models: &[DayModel], failures: &mut Vec<Failure>) -> Result<()> {
        for m in models {
            let name = file_name("fit", m.spec, m.date, "txt");
            let fit = match m.fit() {
                Ok(f) => f,
                Err(e) => {
                    self.out.remove(&name)?;
                    failures.push(failure(Stage::Fit, Some(m.date), e.to_string()));
                    continue;
                }
            };
            let header = [
                ("date", date_str(m.date)),
                ("buckets", bucket_name(m.spec.bucketing).to_string()),
                ("design", if m.spec.extended { "extended" } else { "base" }.to_string()),
                ("skipped_blocks", m.design.skipped_blocks.len().to_string()),
                ("leg_conflicts", m.design.leg_conflicts.to_string()),
            ];
            let mut buf = Vec::new();
            write_fit_report(fit, &header, &mut buf).map_err(|e| Error::io(self.out.path(&name), e))?;
            self.out.write_bytes(&name, &buf)?;
            if !fit.converged {
                failures.push(failure(
                    Stage::Fit,
                    Some(m.date),
                    format!("not converged after {} iterations", fit.iterations),
                ));
            }
        }
        Ok(())
    }

    fn effects(&self, models: &[DayModel], failures: &mut Vec<Failure>) -> Result<()> {
        let qs = &self.cfg.effects.quantiles;
        let bucket = self.cfg.model.buckets;
        let note = format!(
            "ame_prob: average change in the probability of a first-{} block position; positive means earlier",
            bucket_name(bucket)
        );
        let mut daily = Table::new(&["date", "variable", "ame_prob", "gas_equiv", "usd"]);
        daily.comment(&note);
        let mut quant = Table::new(&["date", "variable", "quantile", "effect"]);
        quant.comment(&note);
        quant.comment("nearest-rank quantiles of the per-transaction effects");
        let mut dex = Table::new(&["date", "ame_prob", "gas_equiv", "usd", "avg_gas_price_gwei", "eth_close_usd"]);
        dex.comment("to_dex effect in gas and USD at the day's average gas price and ETH close");

        let tables = par_map(models, |m| {
            let price = self.ds.prices.get(m.date).ok();
            let t = average_marginal_effects(m.fit()?, &m.data, price.as_ref())?;
            Ok::<_, Error>((t, price))
        });
        for (m, t) in models.iter().zip(tables) {
            let name = file_name("ame", m.spec, m.date, "csv");
            let (t, price) = match t {
                Ok(v) => v,
                Err(e) => {
                    self.out.remove(&name)?;
                    failures.push(failure(Stage::Effects, Some(m.date), e.to_string()));
                    continue;
                }
            };
            let d = date_str(m.date);
            let mut tab = Table::new(&["variable", "ame_prob", "gas_equiv", "usd"]);
            tab.comment(&note);
            tab.comment("max_fee_per_gas: derivative per Gwei; indicators: change from 0 to 1");
            tab.comment("gas_equiv: |coef| / |coef of max_fee_per_gas|; usd: gas_equiv at the day's average gas price and ETH close");
            tab.comment(format!(
                "gas per 0.01 probability at the average max-fee effect: {}",
                opt(t.gas_per_probability(0.01), gas)
            ));
            if price.is_none() {
                tab.comment("no price row for this date; usd is NA");
                failures.push(failure(Stage::Effects, Some(m.date), Error::MissingPrice(m.date).to_string()));
            }
            for r in &t.rows {
                let cells = [prob(r.ame), opt(r.gas_equivalent, gas), opt(r.usd, usd)];
                let mut row = vec![r.variable.clone()];
                row.extend(cells.iter().cloned());
                tab.push(row);
                let mut row = vec![d.clone(), r.variable.clone()];
                row.extend(cells);
                daily.push(row);
            }
            for q in quantile_marginal_effects(&t, qs) {
                for (level, v) in q.quantiles {
                    quant.push(vec![d.clone(), q.variable.clone(), fixed(level, 4), prob(v)]);
                }
            }
            if let Some(r) = t.get("to_dex") {
                dex.push(vec![
                    d.clone(),
                    prob(r.ame),
                    opt(r.gas_equivalent, gas),
                    opt(r.usd, usd),
                    opt(price.map(|p| p.avg_gas_price.0), |v| fixed(v, 4)),
                    opt(price.map(|p| p.eth_close_usd), |v| fixed(v, 2)),
                ]);
            }
            self.out.write_table(&name, &tab)?;
        }
        self.out.write_table("ame_daily.csv", &daily)?;
        self.out.write_table("ame_quantiles_daily.csv", &quant)?;
        self.out.write_table("to_dex_usd_daily.csv", &dex)
    }

    fn insurance(&self, models: &[DayModel], failures: &mut Vec<Failure>) -> Result<()> {
        let e = &self.cfg.effects;
        let mut tab = Table::new(&[
            "date",
            "transactions",
            "excluded",
            "mean_gas",
            "aggregate_gas",
            "mean_usd",
            "aggregate_usd",
        ]);
        tab.comment(match e.insurance_rule {
            InsuranceRule::Linear => "gas per transaction: (1 - P(first bucket)) / |max-fee effect|",
            InsuranceRule::FullPoint => "gas per transaction: 1 / |max-fee effect|",
        });
        tab.comment(format!(
            "transactions with |max-fee effect| below {} are excluded",
            sci_short(e.me_floor)
        ));
        let results = par_map(models, |m| {
            let price = self.ds.prices.get(m.date)?;
            reordering_insurance(m.fit()?, &m.data, &price, e.insurance_rule, e.me_floor)
        });
        for (m, r) in models.iter().zip(results) {
            match r {
                Ok(ins) => {
                    let n = ins.per_tx_gas.len();
                    let mean_usd = if n == 0 { f64::NAN } else { ins.aggregate_usd / n as f64 };
                    tab.push(vec![
                        date_str(m.date),
                        n.to_string(),
                        ins.excluded.to_string(),
                        gas(ins.mean_gas()),
                        gas(ins.aggregate_gas),
                        usd(mean_usd),
                        usd(ins.aggregate_usd),
                    ]);
                }
                Err(e) => failures.push(failure(Stage::Insurance, Some(m.date), e.to_string())),
            }
        }
        self.out.write_table("insurance_daily.csv", &tab)
    }

    fn sandwich(&self, models: &[DayModel], failures: &mut Vec<Failure>) -> Result<()> {
        let sc = &self.cfg.sandwich;
        let placed: HashSet<u64> = self
            .days
            .iter()
            .flat_map(|d| d.blocks.iter().map(|b| b.block_number))
            .collect();
        let days: Vec<(&DayData, &DayModel)> = self.days.iter().zip(models).collect();
        let results: Vec<SandwichDay> = par_map(&days, |(day, model)| self.sandwich_day(day, model));

        let mut all_enriched: Vec<EnrichedSandwich> = Vec::new();
        let mut pooled: Vec<EffectObservation> = Vec::new();
        let mut hist = vec![[0usize; 2]; sc.histogram_bins.max(1)];

        let mut daily = Table::new(&[
            "date",
            "records",
            "joined",
            "missing_leg",
            "wrong_block",
            "out_of_order",
            "bad_block",
            "heuristic_candidates",
            "candidates_in_records",
            "back_run_fee_mean_eth",
            "back_run_fee_total_eth",
        ]);
        let unplaced = self
            .ds
            .sandwiches
            .iter()
            .filter(|s| !placed.contains(&s.block_number))
            .count();
        daily.comment(format!("records naming blocks outside the analysed days: {unplaced}"));

        let mut cand = Table::new(&[
            "date",
            "block_number",
            "front_hash",
            "victim_hash",
            "back_hash",
            "in_records",
            "note",
        ]);
        cand.comment("heuristic candidates: same sender and contract around a third party, value reversed");

        let mut qhead: Vec<String> = ["date", "leg", "ame_all_rows", "legs", "leg_mean"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        qhead.extend(self.cfg.effects.quantiles.iter().map(|q| format!("q{}", fixed(*q, 2))));
        let mut legs = Table::new(&qhead);
        legs.comment("effect of the leg indicator on the probability of a first-bucket position");

        let mut filt = Table::new(&["date", "leg", "observations", "kept", "retention"]);
        filt.comment(format!("legs kept when their effect is at least {}", fixed(sc.effect_threshold, 4)));

        let mut effect_reg = Table::new(&[
            "date",
            "term",
            "observations",
            "coef",
            "se",
            "robust_se",
            "ci_lower",
            "ci_upper",
            "robust_ci_lower",
            "robust_ci_upper",
            "r_squared",
        ]);
        effect_reg.comment(format!(
            "OLS of the kept leg effects; {} intervals, robust errors are HC1",
            fixed(sc.ci_level, 4)
        ));

        let mut skew = Table::new(&[
            "date",
            "observations",
            "skewness",
            "ci_lower",
            "ci_upper",
            "residual_skewness",
            "p_value",
            "resamples",
        ]);
        skew.comment(format!(
            "percentile bootstrap {} intervals; p_value: share of paired resamples where residual skewness exceeds raw, ties one half",
            fixed(sc.ci_level, 4)
        ));

        for r in results {
            let d = date_str(r.date);
            for f in &r.failures {
                failures.push(failure(Stage::Sandwich, Some(r.date), f.clone()));
            }
            let backs: Vec<f64> = r.join.enriched.iter().map(|e| e.gas_fees[Leg::Back as usize].0).collect();
            let recorded: HashSet<(u64, [u8; 32])> = r
                .join
                .enriched
                .iter()
                .map(|e| (e.record.block_number, e.record.front_hash.0))
                .chain(r.records.iter().map(|s| (s.block_number, s.front_hash.0)))
                .collect();
            let matched = r
                .candidates
                .iter()
                .filter(|c| recorded.contains(&(c.record.block_number, c.record.front_hash.0)))
                .count();
            let drops = r.join.drops;
            daily.push(vec![
                d.clone(),
                r.records.len().to_string(),
                r.join.enriched.len().to_string(),
                drops.missing_leg.to_string(),
                drops.wrong_block.to_string(),
                drops.out_of_order.to_string(),
                drops.bad_block.to_string(),
                r.candidates.len().to_string(),
                matched.to_string(),
                eth(if backs.is_empty() { f64::NAN } else { backs.iter().sum::<f64>() / backs.len() as f64 }),
                eth(backs.iter().sum()),
            ]);
            for c in &r.candidates {
                let s = &c.record;
                cand.push(vec![
                    d.clone(),
                    s.block_number.to_string(),
                    s.front_hash.to_string(),
                    s.victim_hash.to_string(),
                    s.back_hash.to_string(),
                    recorded.contains(&(s.block_number, s.front_hash.0)).to_string(),
                    c.note.clone(),
                ]);
            }
            for (leg, ame) in &r.leg_ame {
                let mut v: Vec<f64> = r.obs.iter().filter(|(l, _)| l == leg).map(|(_, o)| o.effect).collect();
                v.sort_by(f64::total_cmp);
                let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
                let mut row = vec![d.clone(), leg.as_str().into(), prob(*ame), v.len().to_string(), prob(mean)];
                row.extend(
                    self.cfg
                        .effects
                        .quantiles
                        .iter()
                        .map(|q| opt(nearest_rank(&v, *q), prob)),
                );
                legs.push(row);

                let n = v.len();
                let kept = r.kept.iter().filter(|i| r.obs[**i].0 == *leg).count();
                let rate = if n == 0 { f64::NAN } else { kept as f64 / n as f64 };
                filt.push(vec![d.clone(), leg.as_str().into(), n.to_string(), kept.to_string(), prob(rate)]);
            }
            for i in &r.kept {
                let (leg, o) = r.obs[*i];
                let span = 1.0 - sc.effect_threshold;
                let bins = hist.len();
                let b = if span > 0.0 {
                    (((o.effect - sc.effect_threshold) / span * bins as f64).floor() as usize).min(bins - 1)
                } else {
                    bins - 1
                };
                hist[b][(leg == Leg::Back) as usize] += 1;
                pooled.push(o);
            }
            if let Some(fit) = &r.effect_reg {
                push_ols(&mut effect_reg, &d, fit, sc.ci_level);
            }
            if let Some((ci, red)) = &r.skew {
                skew.push(vec![
                    d.clone(),
                    r.kept.len().to_string(),
                    stat(ci.skewness),
                    stat(ci.lower),
                    stat(ci.upper),
                    stat(red.skew_residual),
                    pval(red.p_value),
                    red.resamples.to_string(),
                ]);
            }
            all_enriched.extend(r.join.enriched);
        }
        if sc.pooled {
            match fit_effect_regression(&pooled) {
                Ok(fit) => push_ols(&mut effect_reg, "pooled", &fit, sc.ci_level),
                Err(e) => failures.push(failure(Stage::Sandwich, None, format!("pooled regression: {e}"))),
            }
        }

        let mut tests = Table::new(&[
            "test",
            "group",
            "n_a",
            "n_b",
            "mean_a",
            "mean_b",
            "statistic",
            "df",
            "p_value",
            "alternative",
        ]);
        tests.comment("backrun_gas: Welch test of back-run gas fees (ETH) against all other transactions");
        tests.comment("displacement: paired test of mempool against block position per leg");
        let all_txs: Vec<TxRecord> = self.days.iter().flat_map(|d| d.txs().cloned()).collect();
        match backrun_gas_test(&all_enriched, &all_txs, sc.ttest) {
            Ok(t) => tests.push(vec![
                "backrun_gas".into(),
                "back_run vs other".into(),
                t.n_a.to_string(),
                t.n_b.to_string(),
                eth(t.mean_a),
                eth(t.mean_b),
                stat(t.t_stat),
                fixed(t.df, 2),
                pval(t.p_value),
                t.alternative.as_str().into(),
            ]),
            Err(e) => failures.push(failure(Stage::Sandwich, None, format!("back-run fee test: {e}"))),
        }
        for row in position_displacement(&all_enriched) {
            tests.push(vec![
                "displacement".into(),
                format!("{} mempool vs block", row.leg.as_str()),
                row.n.to_string(),
                row.n.to_string(),
                stat(row.mempool_mean),
                stat(row.block_mean),
                stat(row.t_stat),
                if row.n > 0 { (row.n - 1).to_string() } else { "NA".into() },
                pval(row.p_value),
                "two-sided".into(),
            ]);
        }

        let mut h = Table::new(&["bin_lower", "bin_upper", "front_run", "back_run"]);
        h.comment("kept leg effects across all days");
        let bins = hist.len();
        let width = (1.0 - sc.effect_threshold) / bins as f64;
        for (i, c) in hist.iter().enumerate() {
            let lo = sc.effect_threshold + width * i as f64;
            h.push(vec![fixed(lo, 4), fixed(lo + width, 4), c[0].to_string(), c[1].to_string()]);
        }

        if !sc.amm_cases.is_empty() {
            let mut amm = Table::new(&[
                "case",
                "reserve_in",
                "reserve_out",
                "counterfactual_out",
                "victim_out",
                "harm",
                "fit_error",
            ]);
            amm.comment(format!("constant-product pool, fee {}", fixed(sc.amm_fee, 6)));
            for c in &sc.amm_cases {
                match amm_counterfactual(c.front_in, c.front_out, c.victim_in, c.victim_out, sc.amm_fee, sc.counterfactual) {
                    Ok(a) => amm.push(vec![
                        c.name.clone(),
                        opt(a.reserves.map(|r| r.0), |v| fixed(v, 6)),
                        opt(a.reserves.map(|r| r.1), |v| fixed(v, 2)),
                        fixed(a.counterfactual_out, 2),
                        fixed(c.victim_out, 2),
                        fixed(a.harm, 2),
                        pval(a.fit_error),
                    ]),
                    Err(e) => failures.push(failure(Stage::Sandwich, None, format!("amm case {}: {e}", c.name))),
                }
            }
            self.out.write_table("amm_counterfactual.csv", &amm)?;
        }

        self.out.write_table("sandwich_daily.csv", &daily)?;
        self.out.write_table("sandwich_candidates.csv", &cand)?;
        self.out.write_table("sandwich_leg_effects_daily.csv", &legs)?;
        self.out.write_table("effects_filter_daily.csv", &filt)?;
        self.out.write_table("effects_filtered_hist.csv", &h)?;
        self.out.write_table("effect_regression_daily.csv", &effect_reg)?;
        self.out.write_table("skewness_daily.csv", &skew)?;
        self.out.write_table("sandwich_tests.csv", &tests)
    }

    fn sandwich_day(&self, day: &DayData, model: &DayModel) -> SandwichDay {
        let sc = &self.cfg.sandwich;
        let blocks: HashSet<u64> = day.blocks.iter().map(|b| b.block_number).collect();
        let records: Vec<SandwichRecord> = self
            .ds
            .sandwiches
            .iter()
            .filter(|s| blocks.contains(&s.block_number))
            .cloned()
            .collect();
        let txs: Vec<TxRecord> = day.txs().cloned().collect();
        let metas: Vec<BlockMeta> = day.blocks.iter().filter_map(|b| b.meta.clone()).collect();
        let join = join_sandwiches(&records, &txs, &metas, &self.ds.mempool);
        let candidates: Vec<Candidate> = day
            .blocks
            .iter()
            .flat_map(|b| detect_sandwiches_heuristic(&b.txs, sc.detect_window))
            .collect();
        let mut out = SandwichDay {
            date: day.date,
            records,
            join,
            candidates,
            obs: Vec::new(),
            leg_ame: Vec::new(),
            kept: Vec::new(),
            effect_reg: None,
            skew: None,
            failures: Vec::new(),
        };
        let fit = match model.fit() {
            Ok(f) => f,
            Err(e) => {
                out.failures.push(e.to_string());
                return out;
            }
        };
        let row_of: HashMap<_, usize> = model
            .design
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.tx_hash, i))
            .collect();
        let idx: Vec<usize> = (0..model.data.n()).collect();
        for (leg, var) in [(Leg::Front, "front_run"), (Leg::Back, "back_run")] {
            let Some(v) = fit.position(var) else {
                out.failures.push(format!("model has no {var} indicator"));
                return out;
            };
            let ame = sum_by(&idx, |i| marginal_effect_discrete(fit, model.data.row(*i), v)) / idx.len().max(1) as f64;
            out.leg_ame.push((leg, ame));
            for e in &out.join.enriched {
                if let Some(i) = row_of.get(&e.leg(leg).tx_hash) {
                    let effect = marginal_effect_discrete(fit, model.data.row(*i), v);
                    out.obs.push((leg, EffectObservation::from_leg(e, leg, effect)));
                }
            }
        }
        let effects: Vec<f64> = out.obs.iter().map(|(_, o)| o.effect).collect();
        out.kept = filter_high_effects(&effects, sc.effect_threshold).0;
        let kept: Vec<EffectObservation> = out.kept.iter().map(|i| out.obs[*i].1).collect();
        if kept.is_empty() {
            out.failures.push("no sandwich legs above the effect threshold".into());
            return out;
        }
        let fit = match fit_effect_regression(&kept) {
            Ok(f) => f,
            Err(e) => {
                out.failures.push(format!("effect regression: {e}"));
                return out;
            }
        };
        let raw: Vec<f64> = kept.iter().map(|o| o.effect).collect();
        let skew = skewness_ci(&raw, sc.ci_level, sc.bootstrap_resamples, stream_seed(self.cfg.seed, day.date, 1))
            .and_then(|ci| {
                skewness_reduction_test(
                    &raw,
                    &fit.residuals,
                    sc.bootstrap_resamples,
                    stream_seed(self.cfg.seed, day.date, 2),
                )
                .map(|r| (ci, r))
            });
        match skew {
            Ok(s) => out.skew = Some(s),
            Err(e) => out.failures.push(format!("skewness: {e}")),
        }
        out.effect_reg = Some(fit);
        out
    }

    fn concentration(&self) -> Result<()> {
        let cfg = self.cfg;
        let blocks: Vec<BlockMeta> = self
            .ds
            .blocks
            .iter()
            .filter(|b| cfg.includes(b.utc_date()))
            .cloned()
            .collect();
        let all = DateWindow::all();
        let shares = builder_shares(&blocks, &self.ds.labels, &all);
        let mut t = Table::new(&["builder", "name", "labeled", "blocks", "share", "mev_eth"]);
        t.comment("blocks without a builder are grouped as none");
        for s in &shares {
            t.push(vec![
                s.builder.map(|a| a.to_string()).unwrap_or_else(|| "none".into()),
                s.name.clone().unwrap_or_default(),
                s.labeled.to_string(),
                s.blocks.to_string(),
                prob(s.share),
                eth(s.mev_eth),
            ]);
        }
        self.out.write_table("shares.csv", &t)?;

        let v = herfindahl_variants(&shares);
        let mut h = Table::new(&["variant", "hhi", "blocks", "builder_blocks", "mev_block_share"]);
        h.comment("Herfindahl index on the 0 to 10000 scale");
        h.comment("all_blocks: builders' shares of every block; mev_only: shares among builder blocks");
        let share = mev_block_share(&blocks, &all);
        for (name, x) in [("all_blocks", v.all_blocks), ("mev_only", v.mev_only)] {
            h.push(vec![
                name.into(),
                fixed(x, 4),
                v.blocks.to_string(),
                v.mev_blocks.to_string(),
                prob(share),
            ]);
        }
        self.out.write_table("hhi.csv", &h)?;

        let mut m = Table::new(&["date", "blocks", "mev_blocks", "share"]);
        for d in mev_share_daily(&blocks, &all) {
            m.push(vec![date_str(d.date), d.blocks.to_string(), d.mev_blocks.to_string(), prob(d.share)]);
        }
        self.out.write_table("mev_share_daily.csv", &m)?;

        let window = cfg.date_window()?;
        let exclusions: BTreeSet<NaiveDate> = cfg
            .window
            .exclude
            .union(&cfg.concentration.revenue_exclusions)
            .copied()
            .collect();
        let rev = validator_revenue(&self.ds.blocks, &self.ds.txs, &window, &exclusions);
        let mut r = Table::new(&["date", "status", "blocks", "net_gas_eth", "mev_payments_eth", "total_eth"]);
        r.comment("net_gas_eth: gas used times the price above the base fee");
        r.comment(format!("transactions whose block has no metadata: {}", rev.orphan_txs));
        let mut rows: BTreeMap<NaiveDate, Vec<String>> = BTreeMap::new();
        for d in &rev.days {
            rows.insert(
                d.date,
                vec![
                    date_str(d.date),
                    "included".into(),
                    d.blocks.to_string(),
                    eth(d.net_gas_eth),
                    eth(d.mev_payments_eth),
                    eth(d.total_eth()),
                ],
            );
        }
        for d in &rev.excluded {
            rows.insert(
                *d,
                vec![date_str(*d), "excluded".into(), "NA".into(), "NA".into(), "NA".into(), "NA".into()],
            );
        }
        for row in rows.into_values() {
            r.push(row);
        }
        self.out.write_table("revenue_daily.csv", &r)
    }
}

struct SandwichDay {
    date: NaiveDate,
    records: Vec<SandwichRecord>,
    join: JoinResult,
    candidates: Vec<Candidate>,
    obs: Vec<(Leg, EffectObservation)>,
    leg_ame: Vec<(Leg, f64)>,
    /// Indices into `obs` at or above the effect threshold.
    kept: Vec<usize>,
    effect_reg: Option<OlsFit>,
    skew: Option<(SkewnessCi, SkewnessReduction)>,
    failures: Vec<String>,
}

fn push_ols(t: &mut Table, date: &str, fit: &OlsFit, level: f64) {
    for (i, name) in fit.names.iter().enumerate() {
        let (lo, hi) = fit.confidence_interval(i, level);
        let (rlo, rhi) = fit.robust_confidence_interval(i, level);
        t.push(vec![
            date.into(),
            name.clone(),
            fit.n.to_string(),
            coef(fit.coef[i]),
            coef(fit.se[i]),
            coef(fit.robust_se[i]),
            coef(lo),
            coef(hi),
            coef(rlo),
            coef(rhi),
            fixed(fit.r_squared, 6),
        ]);
    }
}

fn sci_short(v: f64) -> String {
    output::sci(v, 2)
}
