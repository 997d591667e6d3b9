import numpy as np
import pytest

from epigmrf.config import (
    DEFAULT_PRIORS,
    DataConfig,
    ForecastSettings,
    McmcConfig,
    ModelConfig,
    PriorConfig,
    RunConfig,
    desk_scenario,
    paper_scenario,
    scenario_profile,
)
from epigmrf.dataio import (
    load_contacts,
    load_delay,
    load_populations,
    load_surveillance,
    metadata_line,
    read_draws_wide,
    read_forecasts,
    read_table,
    write_contacts,
    write_deaths,
    write_delay,
    write_draws_wide,
    write_forecasts,
    write_populations,
    write_serology,
)
from epigmrf.engine import DrawsStore, field_param_names
from epigmrf.errors import ConfigError, DataFormatError
from epigmrf.forecast import ForecastDraws
from epigmrf.simulate import generate_dataset, write_dataset


def sample_config(tmp_path=None, **mcmc_overrides):
    priors = {name: DEFAULT_PRIORS[name] for name in DEFAULT_PRIORS}
    model = ModelConfig(
        delta=0.5,
        delta_beta=1.0,
        p_m_kind="tridiagonal",
        p_k_kind="tridiagonal",
        rho_m=0.5,
        rho_time=1.5,
        tau=25.0,
        tau_sampled=False,
        tau_prior_shape=1.0,
        tau_prior_rate=0.01,
        sampled_params=("eta", "d_I", "p"),
        priors=priors,
        theta_init={
            "eta": 0.25,
            "d_L": 3.0,
            "d_I": 4.0,
            "k_sens": 0.85,
            "k_spec": 0.98,
            "p": [0.001, 0.05],
            "z": [[1.0, 0.5, 0.8]],
            "psi": [0.1],
            "ell0": [3.0],
        },
    )
    mcmc = dict(
        iterations=200, burnin=50, thinning=5, chains=1, blocks=3, seed=11
    )
    mcmc.update(mcmc_overrides)
    return RunConfig(
        model=model,
        mcmc=McmcConfig(**mcmc),
        data=DataConfig(
            deaths="train/deaths.csv",
            serology="train/serology.csv",
            populations="populations.csv",
            contacts="contacts.csv",
            delay="delay.csv",
        ),
        forecast=ForecastSettings(horizon_days=10, alpha=0.05),
    )


class TestRunConfig:
    def test_json_roundtrip_identity(self):
        config = sample_config()
        text = config.to_json()
        back = RunConfig.from_json(text)
        assert back == config
        assert back.to_json() == text

    def test_hash_stable_and_sensitive(self):
        a = sample_config()
        b = sample_config(seed=12)
        assert a.config_hash() == sample_config().config_hash()
        assert a.config_hash() != b.config_hash()

    def test_delta_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            sample_config().model.__class__(
                **{**sample_config().model.__dict__, "delta": 0.5, "delta_beta": 0.75}
            )

    def test_burnin_bound(self):
        with pytest.raises(ConfigError):
            sample_config(iterations=50, burnin=50)

    def test_unknown_sampled_group(self):
        model = sample_config().model
        with pytest.raises(ConfigError):
            ModelConfig(**{**model.__dict__, "sampled_params": ("eta", "nope")})

    def test_missing_file_reported_with_path(self, tmp_path):
        config = sample_config()
        with pytest.raises(ConfigError, match="deaths"):
            config.data.validate_paths(tmp_path)

    def test_malformed_json(self):
        with pytest.raises(ConfigError):
            RunConfig.from_json("{not valid json")

    def test_profiles(self):
        desk = scenario_profile("desk", "A")
        assert (desk.n_regions, desk.n_ages, desk.n_days) == (3, 2, 40)
        assert desk.train_days == 30
        paper = scenario_profile("paper", "B")
        assert (paper.n_regions, paper.n_ages, paper.n_days) == (7, 8, 100)
        assert paper.train_days == 86
        assert paper.scenario == "B"
        with pytest.raises(ConfigError):
            scenario_profile("huge", "A")

    def test_scenario_roundtrip(self):
        spec = desk_scenario("B")
        back = type(spec).from_json(spec.to_json())
        assert back == spec

    def test_paper_scenario_hyperparameters(self):
        # the shared generator settings: half-day knots, coupled weights
        spec = paper_scenario("A")
        assert spec.delta == 0.5
        assert spec.delta_beta == 0.5
        assert spec.rho_m == 0.5
        assert spec.rho_time == 1.5


class TestTables:
    def test_metadata_line_format(self):
        meta = metadata_line(42, "beef", chain=1)
        assert meta.startswith("# epigmrf=")
        assert "seed=42" in meta and "config_hash=beef" in meta and "chain=1" in meta

    def test_read_rejects_unknown_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# meta\nregion,day,age,count,extra\n0,1,0,2,9\n")
        with pytest.raises(DataFormatError, match="bad.csv:2"):
            read_table(path, ["region", "day", "age", "count"])

    def test_read_rejects_short_rows(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("region,day,age,count\n0,1,0\n")
        with pytest.raises(DataFormatError, match="bad.csv:2"):
            read_table(path, ["region", "day", "age", "count"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_table(tmp_path / "nope.csv", ["a"])

    def test_deaths_roundtrip(self, tmp_path, rng):
        deaths = rng.poisson(4, (2, 5, 3))
        path = tmp_path / "deaths.csv"
        write_deaths(path, deaths, metadata_line(0))
        pop_path = tmp_path / "pop.csv"
        from epigmrf.seir import PopulationStructure

        pop = PopulationStructure(np.full((2, 3), 100.0))
        write_populations(pop_path, pop, metadata_line(0))
        sero_path = tmp_path / "sero.csv"
        write_serology(sero_path, np.zeros_like(deaths), np.zeros_like(deaths), metadata_line(0))
        data = load_surveillance(path, sero_path, load_populations(pop_path), 2)
        np.testing.assert_array_equal(data.deaths, deaths)
        assert data.sero_samples.sum() == 0

    def test_deaths_grid_completeness_enforced(self, tmp_path):
        path = tmp_path / "deaths.csv"
        path.write_text("region,day,age,count\n0,1,0,2\n0,2,0,1\n")
        pop_path = tmp_path / "pop.csv"
        pop_path.write_text("region,age,N\n0,0,100\n0,1,100\n")
        sero = tmp_path / "sero.csv"
        sero.write_text("region,day,age,positives,samples\n")
        with pytest.raises(DataFormatError, match="missing"):
            load_surveillance(path, sero, load_populations(pop_path), 2)

    def test_duplicate_cell_line_number(self, tmp_path):
        path = tmp_path / "deaths.csv"
        path.write_text("region,day,age,count\n0,1,0,2\n0,1,0,3\n")
        pop_path = tmp_path / "pop.csv"
        pop_path.write_text("region,age,N\n0,0,100\n")
        sero = tmp_path / "sero.csv"
        sero.write_text("region,day,age,positives,samples\n")
        with pytest.raises(DataFormatError, match="deaths.csv:3"):
            load_surveillance(path, sero, load_populations(pop_path), 2)

    def test_delay_contiguity(self, tmp_path):
        path = tmp_path / "delay.csv"
        path.write_text("lag_day,cdf\n0,0.1\n2,0.5\n")
        with pytest.raises(DataFormatError):
            load_delay(path)

    def test_contacts_roundtrip(self, tmp_path):
        ds = generate_dataset(desk_scenario("A"), 5)
        path = tmp_path / "contacts.csv"
        write_contacts(path, ds.schedule, 2, metadata_line(0))
        sched = load_contacts(path, 2, 2)
        assert len(sched.periods) == len(ds.schedule.periods)
        for a, b in zip(sched.periods, ds.schedule.periods):
            assert a.start_step == b.start_step
            assert a.slot == b.slot
            np.testing.assert_allclose(a.matrices, b.matrices)

    def test_delay_roundtrip(self, tmp_path):
        ds = generate_dataset(desk_scenario("A"), 5)
        path = tmp_path / "delay.csv"
        write_delay(path, ds.delay_cdf, metadata_line(0))
        delay = load_delay(path)
        np.testing.assert_allclose(delay.pmf, ds.delay.pmf, atol=1e-15)


class TestDrawsIO:
    def make_draws(self, rng, with_tau=True):
        n, d_theta, knots, strata = 7, 3, 4, 2
        return DrawsStore(
            theta_names=["eta", "p[0]", "p[1]"],
            field_names=field_param_names(knots, strata),
            theta=rng.standard_normal((n, d_theta)),
            field=rng.standard_normal((n, knots * strata)),
            g=rng.standard_normal(n),
            tau=np.abs(rng.standard_normal(n)) if with_tau else None,
            iterations=np.arange(10, 10 + n),
        )

    def test_wide_roundtrip(self, tmp_path, rng):
        draws = self.make_draws(rng)
        path = tmp_path / "draws_wide.csv"
        write_draws_wide(path, draws, metadata_line(1))
        names, iters, matrix = read_draws_wide(path)
        expected_matrix, expected_names = draws.parameter_matrix()
        assert names == expected_names
        np.testing.assert_array_equal(iters, draws.iterations)
        np.testing.assert_allclose(matrix, expected_matrix, rtol=0, atol=0)

    def test_repr_floats_roundtrip_exactly(self, tmp_path, rng):
        draws = self.make_draws(rng, with_tau=False)
        path = tmp_path / "draws_wide.csv"
        write_draws_wide(path, draws, metadata_line(1))
        _, _, matrix = read_draws_wide(path)
        expected, _ = draws.parameter_matrix()
        assert np.array_equal(matrix, expected)  # bitwise, thanks to repr


class TestForecastIO:
    def test_roundtrip(self, tmp_path, rng):
        deaths = rng.poisson(6, (5, 2, 4, 3))
        fc = ForecastDraws(
            deaths=deaths,
            death_mean=deaths.astype(float),
            field_future=np.zeros((5, 0, 2)),
            horizon_days=4,
        )
        path = tmp_path / "forecasts.csv"
        write_forecasts(path, fc, metadata_line(0), first_day=31)
        loaded, first_day = read_forecasts(path)
        assert first_day == 31
        np.testing.assert_array_equal(loaded, deaths)


class TestDatasetWriter:
    def test_files_written_and_deterministic(self, tmp_path):
        spec = desk_scenario("A")
        ds = generate_dataset(spec, 99)
        out1 = tmp_path / "one"
        out2 = tmp_path / "two"
        write_dataset(ds, out1)
        write_dataset(generate_dataset(spec, 99), out2)
        for rel in (
            "train/deaths.csv",
            "train/serology.csv",
            "test/deaths.csv",
            "populations.csv",
            "contacts.csv",
            "delay.csv",
            "truth_field.csv",
            "truth_params.json",
        ):
            assert (out1 / rel).exists()
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        spec = desk_scenario("A")
        write_dataset(generate_dataset(spec, 1), tmp_path / "a")
        write_dataset(generate_dataset(spec, 2), tmp_path / "b")
        assert (tmp_path / "a/train/deaths.csv").read_bytes() != (
            tmp_path / "b/train/deaths.csv"
        ).read_bytes()

    def test_scenario_b_uncoupled_increments(self):
        # with identity strata structure the region increments decorrelate
        spec = desk_scenario("B")
        from epigmrf.simulate import field_precision_spec
        from epigmrf.gmrf import sample_field

        pspec = field_precision_spec(spec)
        assert pspec.p_m_kind.value == "identity"
        rng = np.random.default_rng(0)
        draws = sample_field(pspec, rng, size=4000)
        fields = draws.reshape(4000, spec.n_regions, pspec.n_knots)
        incr = np.diff(fields, axis=2)
        r01 = np.corrcoef(incr[:, 0, :].ravel(), incr[:, 1, :].ravel())[0, 1]
        assert abs(r01) < 0.05
        # scenario A increments, by contrast, correlate across neighbours
        spec_a = desk_scenario("A")
        pspec_a = field_precision_spec(spec_a)
        draws_a = sample_field(pspec_a, rng, size=4000)
        fields_a = draws_a.reshape(4000, spec_a.n_regions, pspec_a.n_knots)
        incr_a = np.diff(fields_a, axis=2)
        r01_a = np.corrcoef(incr_a[:, 0, :].ravel(), incr_a[:, 1, :].ravel())[0, 1]
        assert r01_a > 0.1
