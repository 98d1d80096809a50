import json
import warnings

import pytest

from saekit.errors import InputError, ModelComparisonWarning, PipelineStageError
from saekit.pipeline import load_config, read_area_table, run_pipeline


def run_fixture_pipeline(fixtures_dir, out_dir):
    config = load_config(fixtures_dir / "pipeline.json")
    config.output_dir = out_dir
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelComparisonWarning)
        return run_pipeline(config)


class TestRunPipeline:
    def test_full_run_on_bundled_fixture(self, fixtures_dir, tmp_path):
        result = run_fixture_pipeline(fixtures_dir, tmp_path / "out")
        assert len(result.comparison) == 19
        assert len(result.suite) == 4
        for name in (
            "direct_estimates.csv",
            "model_table.csv",
            "model_eer.csv",
            "comparison.csv",
            "comparison.md",
            "delta.csv",
            "fits.json",
        ):
            assert (tmp_path / "out" / name).exists()

    def test_rerun_is_byte_identical(self, fixtures_dir, tmp_path):
        first = run_fixture_pipeline(fixtures_dir, tmp_path / "a")
        second = run_fixture_pipeline(fixtures_dir, tmp_path / "b")
        for key, path_a in first.outputs.items():
            path_b = second.outputs[key]
            assert path_a.read_bytes() == path_b.read_bytes(), key

    def test_model_eer_table_has_all_models(self, fixtures_dir, tmp_path):
        result = run_fixture_pipeline(fixtures_dir, tmp_path / "out")
        header = (tmp_path / "out" / "model_eer.csv").read_text().splitlines()[0]
        assert header == "domain_id,eer_model1,eer_model2,eer_model3,eer_model4"

    def test_fits_json_ranked_by_aic(self, fixtures_dir, tmp_path):
        result = run_fixture_pipeline(fixtures_dir, tmp_path / "out")
        payload = json.loads((tmp_path / "out" / "fits.json").read_text())
        aics = [entry["aic"] for entry in payload]
        assert aics == sorted(aics)
        assert payload[0]["label"] == result.best.label

    def test_missing_areas_file_is_stage_tagged(self, fixtures_dir, tmp_path):
        config = load_config(fixtures_dir / "pipeline.json")
        config.areas = tmp_path / "nope.csv"
        config.output_dir = tmp_path / "out"
        with pytest.raises(PipelineStageError, match="stage 'covariates'"):
            run_pipeline(config)

    def test_missing_microdata_is_stage_tagged(self, fixtures_dir, tmp_path):
        config = load_config(fixtures_dir / "pipeline.json")
        config.microdata = tmp_path / "nope.csv"
        config.output_dir = tmp_path / "out"
        with pytest.raises(PipelineStageError, match="stage 'microdata'"):
            run_pipeline(config)

    def test_domain_mismatch_is_stage_tagged(self, fixtures_dir, tmp_path):
        import csv

        config = load_config(fixtures_dir / "pipeline.json")
        with open(fixtures_dir / "areas.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        rows[1][0] = "phantom_domain"
        trimmed = tmp_path / "areas.csv"
        with open(trimmed, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)
        config.areas = trimmed
        config.output_dir = tmp_path / "out"
        with pytest.raises(PipelineStageError, match="stage 'covariates'"):
            run_pipeline(config)


class TestLoadConfig:
    def test_missing_keys_reported(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"microdata": "m.csv"}', encoding="utf-8")
        with pytest.raises(InputError, match="missing keys"):
            load_config(path)

    def test_unknown_keys_reported(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(
            '{"microdata": "m", "areas": "a", "output_dir": "o", "typo_key": 1}',
            encoding="utf-8",
        )
        with pytest.raises(InputError, match="typo_key"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="not found"):
            load_config(tmp_path / "nope.json")

    def test_relative_paths_resolve_against_config(self, fixtures_dir):
        config = load_config(fixtures_dir / "pipeline.json")
        assert config.microdata == fixtures_dir / "microdata.csv"
        assert config.areas == fixtures_dir / "areas.csv"

    def test_model_list_becomes_labelled_mapping(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(
            json.dumps(
                {
                    "microdata": "m",
                    "areas": "a",
                    "output_dir": "o",
                    "models": ["y ~ log_ri", "y ~ zeta"],
                }
            ),
            encoding="utf-8",
        )
        config = load_config(path)
        assert config.models == {"model1": "y ~ log_ri", "model2": "y ~ zeta"}

    def test_yaml_config(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(
            "microdata: m.csv\nareas: a.csv\noutput_dir: out\nmethod: ml\n",
            encoding="utf-8",
        )
        config = load_config(path)
        assert config.method == "ml"


class TestReadAreaTable:
    def test_reads_fixture(self, fixtures_dir):
        table = read_area_table(fixtures_dir / "areas.csv")
        assert table.n_domains == 19
        assert "incidence" in table.columns

    def test_requires_domain_id(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("name,x\nfoo,1\n", encoding="utf-8")
        with pytest.raises(InputError, match="domain_id"):
            read_area_table(path)

    def test_non_numeric_cell_reported(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("domain_id,x\nfoo,not_a_number\n", encoding="utf-8")
        with pytest.raises(InputError, match="not_a_number"):
            read_area_table(path)
