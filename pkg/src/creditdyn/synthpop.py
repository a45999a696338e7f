"""Seeded synthetic population of persons and companies: monthly financial
behavior (debt by type, delinquency buckets, revolving amounts, a first
loan with an amortization schedule) plus two social networks, an economic
one with monthly edge validity and a static family one.

A hidden per-node latent risk, smoothed once over the combined network to
create homophily, drives both delinquency transitions and debt levels, so
egonet aggregates of neighbor financials carry real signal about a
borrower's own risk."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from creditdyn.graphs import SocialGraph, PERSON, COMPANY

DPD_BUCKETS = ["CURRENT", "DPD_1_29", "DPD_30_59", "DPD_60_89", "DPD_90_PLUS"]
DPD_CODE = {name: i for i, name in enumerate(DPD_BUCKETS)}
DEFAULT_BUCKET = 4

# delinquency chain shape: forward probability is
# sigmoid(logit(base_hazard) + RISK_SLOPE * (risk - 0.5)); cure resets a
# non-absorbed delinquent loan to CURRENT
RISK_SLOPE = 7.0
CURE_PROB = 0.35


class ConfigurationError(ValueError):
    pass


@dataclass
class MonthlyFinancialState:
    """One borrower-month. The first loan's outstanding principal sits in
    the kind-appropriate debt column; ``loan_principal`` tracks it."""
    month: int
    debt_consumer: float = 0.0
    debt_commercial: float = 0.0
    debt_mortgage: float = 0.0
    revolving_amount: float = 0.0
    dpd_bucket: str = "CURRENT"
    has_active_loan: bool = False
    loan_principal: float = 0.0
    months_on_book: int = 0


def amortize(loan_term: int, original_amount: float,
             state: MonthlyFinancialState) -> MonthlyFinancialState:
    """Advance one month of a constant-installment schedule.

    Principal declines linearly; the loan closes at term end unless it
    ever defaulted (90+ is absorbing, so a defaulted loan never pays off
    and its balance freezes)."""
    if not state.has_active_loan:
        raise ValueError("amortize requires an active loan")
    k = state.months_on_book + 1
    defaulted = state.dpd_bucket == "DPD_90_PLUS"
    if k >= loan_term and not defaulted:
        return MonthlyFinancialState(month=state.month + 1,
                                     revolving_amount=state.revolving_amount,
                                     debt_mortgage=state.debt_mortgage,
                                     has_active_loan=False, months_on_book=k)
    principal = state.loan_principal if defaulted \
        else original_amount * (1.0 - k / loan_term)
    return MonthlyFinancialState(
        month=state.month + 1,
        debt_consumer=principal,
        debt_mortgage=state.debt_mortgage,
        revolving_amount=state.revolving_amount,
        dpd_bucket=state.dpd_bucket,
        has_active_loan=True,
        loan_principal=principal,
        months_on_book=k)


@dataclass(frozen=True)
class PopulationConfig:
    n_persons: int = 20_000
    n_companies: int = 4_000
    cohort_persons: int = 8_000
    cohort_companies: int = 2_000
    horizon_months: int = 30
    seed: int = 42
    homophily_strength: float = 0.7
    base_hazard_person: float = 0.16
    base_hazard_company: float = 0.18
    loan_term_months_range: tuple = (6, 24)
    origination_window: tuple = (7, 7)
    background_loan_prob: float = 0.6

    def validate(self) -> None:
        for name in ("n_persons", "n_companies", "cohort_persons",
                     "cohort_companies"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.cohort_persons > self.n_persons:
            raise ConfigurationError("cohort_persons exceeds n_persons")
        if self.cohort_companies > self.n_companies:
            raise ConfigurationError("cohort_companies exceeds n_companies")
        if self.horizon_months < 13:
            raise ConfigurationError("horizon_months must be >= 13")
        for name in ("homophily_strength", "base_hazard_person",
                     "base_hazard_company", "background_loan_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1]")
        lo, hi = self.loan_term_months_range
        if not (1 <= lo <= hi):
            raise ConfigurationError("loan_term_months_range must be a valid interval")
        lo, hi = self.origination_window
        if not (1 <= lo <= hi <= self.horizon_months):
            raise ConfigurationError("origination_window must lie within the horizon")


@dataclass
class BorrowerPanel:
    """Monthly financial states for every node, as (n_nodes, horizon)
    arrays. Month indices are 1-based."""

    node_ids: np.ndarray
    node_kinds: np.ndarray
    debt_consumer: np.ndarray
    debt_commercial: np.ndarray
    debt_mortgage: np.ndarray
    revolving: np.ndarray
    dpd: np.ndarray            # int8 bucket codes
    active_loan: np.ndarray    # bool
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}

    @property
    def horizon(self) -> int:
        return self.debt_consumer.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def index_of(self, node_id) -> int:
        return self._index[node_id]

    def total_debt(self) -> np.ndarray:
        return self.debt_consumer + self.debt_commercial + self.debt_mortgage

    def origination_month(self, idx: np.ndarray) -> np.ndarray:
        """First month with an active loan (0 where there is none)."""
        act = self.active_loan[idx]
        first = act.argmax(axis=1) + 1
        return np.where(act.any(axis=1), first, 0)

    def to_csv(self, path) -> None:
        n, h = self.n_nodes, self.horizon
        months = np.tile(np.arange(1, h + 1), n)
        df = pd.DataFrame({
            "borrower_id": np.repeat(self.node_ids, h),
            "kind": np.repeat(self.node_kinds, h),
            "month": months,
            "debt_consumer": self.debt_consumer.ravel().round(2),
            "debt_commercial": self.debt_commercial.ravel().round(2),
            "debt_mortgage": self.debt_mortgage.ravel().round(2),
            "revolving_amount": self.revolving.ravel().round(2),
            "dpd_bucket": np.array(DPD_BUCKETS, dtype=object)[self.dpd.ravel()],
            "has_active_loan": self.active_loan.ravel().astype(int),
        })
        df.to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "BorrowerPanel":
        df = pd.read_csv(path, dtype={"borrower_id": str, "kind": str,
                                      "dpd_bucket": str})
        bad = ~df["dpd_bucket"].isin(DPD_BUCKETS)
        if bad.any():
            line = int(np.flatnonzero(bad.to_numpy())[0]) + 2  # header is line 1
            raise ValueError(f"{path}: malformed dpd_bucket token at line {line}")
        ids, first_pos = np.unique(df["borrower_id"].to_numpy(), return_index=True)
        order = np.argsort(first_pos)
        ids = ids[order]
        index = {b: i for i, b in enumerate(ids)}
        kinds = np.empty(len(ids), dtype=object)
        h = int(df["month"].max())
        shape = (len(ids), h)
        arrays = {k: np.zeros(shape) for k in
                  ("debt_consumer", "debt_commercial", "debt_mortgage",
                   "revolving_amount")}
        dpd = np.zeros(shape, dtype=np.int8)
        active = np.zeros(shape, dtype=bool)
        rows = df["borrower_id"].map(index).to_numpy()
        cols = df["month"].to_numpy() - 1
        if (cols < 0).any() or (cols >= h).any():
            raise ValueError(f"{path}: month out of range")
        kinds[rows] = df["kind"].to_numpy()
        for k, arr in arrays.items():
            arr[rows, cols] = df[k].to_numpy(dtype=float)
        dpd[rows, cols] = df["dpd_bucket"].map(DPD_CODE).to_numpy(dtype=np.int8)
        active[rows, cols] = df["has_active_loan"].to_numpy(dtype=int).astype(bool)
        return cls(node_ids=ids.astype(object), node_kinds=kinds,
                   debt_consumer=arrays["debt_consumer"],
                   debt_commercial=arrays["debt_commercial"],
                   debt_mortgage=arrays["debt_mortgage"],
                   revolving=arrays["revolving_amount"],
                   dpd=dpd, active_loan=active)


@dataclass
class GenerationResult:
    panel: BorrowerPanel
    eownet: SocialGraph
    familynet: SocialGraph
    cohort_ids: np.ndarray
    latent_risk: np.ndarray   # hidden; kept out of every exported file


def _forward_prob(base_hazard: np.ndarray, risk: np.ndarray) -> np.ndarray:
    logit = np.log(base_hazard / (1.0 - base_hazard)) + RISK_SLOPE * (risk - 0.5)
    return 1.0 / (1.0 + np.exp(-logit))


def implied_default_rate(base_hazard, risk, window=12) -> float:
    """Expected fraction of loans reaching the absorbing 90+ bucket within
    ``window`` months (scalar or per-node exposure months, to account for
    loans whose term ends early), marginalizing the delinquency chain over
    the given risks. Used as the generator's calibration target."""
    p = _forward_prob(np.asarray(base_hazard, dtype=float), np.asarray(risk))
    n = p.shape[0]
    window = np.broadcast_to(np.asarray(window, dtype=np.int64), (n,))
    state = np.zeros((n, 5))
    state[:, 0] = 1.0
    defaulted = np.zeros(n)
    for m in range(int(window.max())):
        expired = window == m
        defaulted[expired] = state[expired, 4]
        # cures are drawn first for delinquent states, then a forward
        # move with probability p; otherwise stay
        new = np.zeros_like(state)
        stay = (1 - CURE_PROB) * (1 - p)
        new[:, 0] = state[:, 0] * (1 - p) + (state[:, 1] + state[:, 2] + state[:, 3]) * CURE_PROB
        new[:, 1] = state[:, 0] * p + state[:, 1] * stay
        new[:, 2] = state[:, 1] * (1 - CURE_PROB) * p + state[:, 2] * stay
        new[:, 3] = state[:, 2] * (1 - CURE_PROB) * p + state[:, 3] * stay
        new[:, 4] = state[:, 4] + state[:, 3] * (1 - CURE_PROB) * p
        state = new
    defaulted[window >= int(window.max())] = state[window >= int(window.max()), 4]
    return float(defaulted.mean())


def _step_dpd(state, p_fwd, rng_u, rng_c):
    """One month of the delinquency chain, vectorized. ``state`` int8;
    moves at most one bucket forward, may cure to CURRENT; 90+ absorbs."""
    new = state.copy()
    delinquent = (state >= 1) & (state <= 3)
    cure = delinquent & (rng_c < CURE_PROB)
    fwd = (rng_u < p_fwd) & (state <= 3) & ~cure
    new[fwd] = state[fwd] + 1
    new[cure] = 0
    return new


def generate_population(config: PopulationConfig) -> GenerationResult:
    """Generate the borrower panel and the two social networks. Fully
    deterministic per seed (single RNG stream, fixed draw order)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_p, n_c = config.n_persons, config.n_companies
    n = n_p + n_c
    h = config.horizon_months

    node_ids = np.array([f"p{i:06d}" for i in range(n_p)]
                        + [f"c{i:06d}" for i in range(n_c)], dtype=object)
    node_kinds = np.array([PERSON] * n_p + [COMPANY] * n_c, dtype=object)
    is_person = np.arange(n) < n_p

    base_risk = rng.beta(2.0, 2.0, size=n)

    familynet = _build_familynet(rng, n_p, node_ids, node_kinds)
    eownet = _build_eownet(rng, n_p, n_c, h, node_ids, node_kinds)

    risk = _smooth_risk(base_risk, config.homophily_strength, familynet, eownet)

    # cohort selection and loan terms
    cohort_p = rng.choice(n_p, size=config.cohort_persons, replace=False)
    cohort_c = n_p + rng.choice(n_c, size=config.cohort_companies, replace=False)
    cohort = np.sort(np.concatenate([cohort_p, cohort_c]))

    has_loan = np.zeros(n, dtype=bool)
    has_loan[cohort] = True
    background = (rng.random(n) < config.background_loan_prob) & ~has_loan
    has_loan |= background

    orig = np.zeros(n, dtype=np.int64)
    lo, hi = config.origination_window
    orig[cohort] = rng.integers(lo, hi + 1, size=cohort.size)
    bg_idx = np.flatnonzero(background)
    orig[bg_idx] = rng.integers(1, 4, size=bg_idx.size)

    tlo, thi = config.loan_term_months_range
    term = np.zeros(n, dtype=np.int64)
    loan_idx = np.flatnonzero(has_loan)
    term[loan_idx] = rng.integers(tlo, thi + 1, size=loan_idx.size)
    amount = np.zeros(n)
    amount[loan_idx] = rng.lognormal(mean=np.where(is_person[loan_idx], 8.0, 9.5),
                                     sigma=0.6)

    # background products: persistent, mildly risk-correlated levels
    size_factor = rng.lognormal(mean=np.where(is_person, 7.0, 9.0), sigma=0.5)
    has_revolving = rng.random(n) < np.where(is_person, 0.6, 0.7)
    revolving_base = np.where(has_revolving,
                              0.15 * size_factor * (0.5 + 1.2 * risk), 0.0)
    has_bg_debt = rng.random(n) < 0.45
    bg_debt_base = np.where(has_bg_debt, 0.4 * size_factor * (0.7 + 0.6 * risk), 0.0)
    has_mortgage = (rng.random(n) < 0.15) & is_person
    mortgage_base = np.where(has_mortgage, 3.0 * size_factor, 0.0)

    p_fwd = _forward_prob(np.where(is_person, config.base_hazard_person,
                                   config.base_hazard_company), risk)

    debt_consumer = np.zeros((n, h))
    debt_commercial = np.zeros((n, h))
    debt_mortgage = np.zeros((n, h))
    revolving = np.zeros((n, h))
    dpd = np.zeros((n, h), dtype=np.int8)
    active = np.zeros((n, h), dtype=bool)

    state = np.zeros(n, dtype=np.int8)
    paid_off = np.zeros(n, dtype=bool)
    for m in range(1, h + 1):
        started = has_loan & (orig <= m)
        # payoff at term end, unless the loan ever defaulted
        due = started & ~paid_off & (m >= orig + term) & (state < DEFAULT_BUCKET)
        paid_off |= due
        live = started & ~paid_off
        # delinquency transitions for live loans
        u = rng.random(n)
        c = rng.random(n)
        nxt = _step_dpd(state, p_fwd, u, c)
        # delinquency can only accrue from the second month on book
        state = np.where(live & (m > orig), nxt, state)
        dpd[:, m - 1] = np.where(live, state, 0)
        active[:, m - 1] = live
        # declining principal, frozen once defaulted
        elapsed = np.clip(m - orig + 1, 0, None)
        frac = np.clip(1.0 - (elapsed - 1) / np.maximum(term, 1), 0.0, 1.0)
        defaulted = state == DEFAULT_BUCKET
        # defaulted loans stop amortizing: balance floored, never paid off
        principal = np.where(live, amount * np.where(defaulted,
                                                     np.maximum(frac, 0.25), frac), 0.0)
        noise = rng.lognormal(mean=0.0, sigma=0.15, size=n)
        loan_debt = principal
        debt_consumer[:, m - 1] = np.where(is_person, loan_debt, 0.0) \
            + np.where(is_person, bg_debt_base * noise, 0.0)
        debt_commercial[:, m - 1] = np.where(~is_person, loan_debt, 0.0) \
            + np.where(~is_person, bg_debt_base * noise, 0.0)
        debt_mortgage[:, m - 1] = mortgage_base * (1.0 - 0.002 * (m - 1))
        revolving[:, m - 1] = revolving_base * rng.lognormal(0.0, 0.25, size=n)

    panel = BorrowerPanel(node_ids=node_ids, node_kinds=node_kinds,
                          debt_consumer=debt_consumer,
                          debt_commercial=debt_commercial,
                          debt_mortgage=debt_mortgage,
                          revolving=revolving, dpd=dpd, active_loan=active)
    return GenerationResult(panel=panel, eownet=eownet, familynet=familynet,
                            cohort_ids=node_ids[cohort], latent_risk=risk)


def _build_familynet(rng, n_p, node_ids, node_kinds) -> SocialGraph:
    """Marriages (undirected) and parent->child edges among persons;
    static, no validity bounds."""
    n_couples = int(0.25 * n_p)
    partners = rng.choice(n_p, size=2 * n_couples, replace=False)
    m_src = partners[:n_couples]
    m_dst = partners[n_couples:]
    n_children = int(0.6 * n_p)
    children = rng.choice(n_p, size=n_children, replace=False)
    parents = rng.integers(0, n_p, size=n_children)
    ok = parents != children
    src = np.concatenate([m_src, parents[ok]])
    dst = np.concatenate([m_dst, children[ok]])
    etype = np.array(["marriage"] * n_couples + ["parent_child"] * int(ok.sum()),
                     dtype=object)
    zeros = np.zeros(src.size, dtype=np.int64)
    return SocialGraph(node_ids, node_kinds, src, dst, etype, zeros, zeros)


def _build_eownet(rng, n_p, n_c, horizon, node_ids, node_kinds) -> SocialGraph:
    """Ownership person->company, employment person->company (monthly
    validity) and transactional company->company edges grown by
    preferential attachment."""
    src_parts, dst_parts, types, vfrom, vto = [], [], [], [], []

    # ownership: 1-3 owners per company, valid for the whole horizon
    n_owners = rng.integers(1, 4, size=n_c)
    owner_src = rng.integers(0, n_p, size=int(n_owners.sum()))
    owner_dst = np.repeat(np.arange(n_c), n_owners) + n_p
    src_parts.append(owner_src)
    dst_parts.append(owner_dst)
    types += ["ownership"] * owner_src.size
    vfrom.append(np.ones(owner_src.size, dtype=np.int64))
    vto.append(np.full(owner_src.size, horizon, dtype=np.int64))

    # employment with bounded validity windows
    n_staff = rng.poisson(4.0, size=n_c)
    emp_src = rng.integers(0, n_p, size=int(n_staff.sum()))
    emp_dst = np.repeat(np.arange(n_c), n_staff) + n_p
    start = rng.integers(1, horizon + 1, size=emp_src.size)
    dur = rng.geometric(1.0 / 12.0, size=emp_src.size)
    always = rng.random(emp_src.size) < 0.5
    start = np.where(always, 1, start)
    end = np.where(always, horizon, np.minimum(start + dur, horizon))
    src_parts.append(emp_src)
    dst_parts.append(emp_dst)
    types += ["employment"] * emp_src.size
    vfrom.append(start.astype(np.int64))
    vto.append(end.astype(np.int64))

    # transactions: preferential attachment on in-degree
    weights = np.ones(n_c)
    t_src, t_dst = [], []
    for c in range(n_c):
        k = rng.poisson(2.0)
        for _ in range(k):
            probs = weights / weights.sum()
            target = rng.choice(n_c, p=probs)
            if target == c:
                continue
            t_src.append(c + n_p)
            t_dst.append(target + n_p)
            weights[target] += 1.0
    t_src = np.array(t_src, dtype=np.int64)
    t_dst = np.array(t_dst, dtype=np.int64)
    t_start = rng.integers(1, horizon + 1, size=t_src.size)
    t_dur = rng.geometric(1.0 / 9.0, size=t_src.size)
    t_always = rng.random(t_src.size) < 0.4
    t_start = np.where(t_always, 1, t_start)
    t_end = np.where(t_always, horizon, np.minimum(t_start + t_dur, horizon))
    src_parts.append(t_src)
    dst_parts.append(t_dst)
    types += ["transaction"] * t_src.size
    vfrom.append(t_start.astype(np.int64))
    vto.append(t_end.astype(np.int64))

    return SocialGraph(node_ids, node_kinds,
                       np.concatenate(src_parts), np.concatenate(dst_parts),
                       np.array(types, dtype=object),
                       np.concatenate(vfrom), np.concatenate(vto))


def _smooth_risk(base, strength, familynet, eownet) -> np.ndarray:
    """One smoothing pass: blend each node's base draw with its combined-
    network neighbor mean, weighted by the homophily strength."""
    if strength == 0.0:
        return base.copy()
    n = base.shape[0]
    pairs = np.vstack([familynet.undirected_pairs(), eownet.undirected_pairs()])
    sums = np.zeros(n)
    counts = np.zeros(n)
    np.add.at(sums, pairs[:, 0], base[pairs[:, 1]])
    np.add.at(sums, pairs[:, 1], base[pairs[:, 0]])
    np.add.at(counts, pairs[:, 0], 1.0)
    np.add.at(counts, pairs[:, 1], 1.0)
    nbr_mean = np.where(counts > 0, sums / np.maximum(counts, 1.0), base)
    return np.clip((1.0 - strength) * base + strength * nbr_mean, 0.0, 1.0)
