import time
from concurrent.futures import ThreadPoolExecutor

import pandas as pd
import pytest

from tests.weightspace.helpers import quick_fit
from weightspace.config import (
    DatasetConfig,
    ExperimentConfig,
    RunConfig,
    SpecConfig,
)
from weightspace.core import MlpSpec
from weightspace.errors import ConfigError, FormatError
from weightspace.experiments import (
    LmcPair,
    augmentation_rows,
    augmentations_experiment,
    budget_experiment,
    curves_frame,
    fit_all,
    lmc_pair,
    lmc_pairs,
    lmc_scan,
    map_jobs,
    probe_runs,
    seed_configs,
    views_experiment,
)
from weightspace.nnrun import TrainConfig
from weightspace.probe import ProbeAugmentation, ProbeConfig
from weightspace.store import InrDataset, build_from_manifest, encode_samples


def _config(**experiment):
    experiment.setdefault("seeds", 2)
    experiment.setdefault("objects", 4)
    experiment.setdefault("max_views", 2)
    experiment.setdefault("test_objects", 4)
    return RunConfig(
        dataset=DatasetConfig(
            num_objects=4,
            resolution=8,
            spec=SpecConfig(dims=[2, 8, 8, 1]),
            fit=quick_fit(steps=20),
        ),
        probe=ProbeConfig(steps=20, batch_size=4, hidden_width=16, eval_every=10),
        experiment=ExperimentConfig(**experiment),
    )


@pytest.fixture(scope="module")
def two_view_dataset():
    return build_from_manifest(_config().dataset.manifest(3, 2))


def test_map_jobs_keeps_job_order():
    def slow_square(x):
        time.sleep(0.01 * (5 - x))
        return x * x

    assert map_jobs(slow_square, range(5)) == [0, 1, 4, 9, 16]
    with ThreadPoolExecutor(max_workers=5) as executor:
        assert map_jobs(slow_square, range(5), executor) == [0, 1, 4, 9, 16]


def test_seed_configs():
    configs = seed_configs(ProbeConfig(seed=10, steps=7), 3)
    assert [c.seed for c in configs] == [10, 11, 12]
    assert all(c.steps == 7 for c in configs)
    with pytest.raises(ConfigError) as err:
        seed_configs(ProbeConfig(), 0)
    assert err.value.key == "seeds"


def test_fit_all_matches_separate_builds():
    dataset_cfg = _config().dataset
    manifests = [
        dataset_cfg.manifest(2, 2),
        dataset_cfg.manifest(2, 1),
        dataset_cfg.manifest(2, 1, object_offset=2),
    ]
    built = fit_all(manifests)
    for manifest, dataset in zip(manifests, built):
        assert dataset.manifest == manifest
        alone = build_from_manifest(manifest)
        assert encode_samples(dataset.samples) == encode_samples(alone.samples)


def test_probe_runs_and_curves(two_view_dataset):
    cfg = ProbeConfig(steps=20, batch_size=4, eval_every=10)
    runs = probe_runs(
        two_view_dataset, two_view_dataset, ProbeAugmentation(), cfg, seeds=2
    )
    assert [run.seed for run in runs] == [0, 1]
    curves = curves_frame(runs)
    assert list(curves.columns) == ["seed", "step", "train_loss", "test_acc"]
    assert curves["step"].tolist() == [0, 10, 19, 0, 10, 19]


def test_views_experiment_table():
    table = views_experiment(_config())
    assert table[["views", "split"]].values.tolist() == [
        [1, "internal"],
        [1, "external"],
        [2, "internal"],
        [2, "external"],
    ]
    assert (table["seeds"] == 2).all()
    assert table["accuracy_mean"].between(0.0, 1.0).all()


def test_views_experiment_does_not_depend_on_workers():
    cfg = _config(seeds=1, max_views=1)
    serial = views_experiment(cfg)
    with ThreadPoolExecutor(max_workers=4) as executor:
        parallel = views_experiment(cfg, executor)
    pd.testing.assert_frame_equal(serial, parallel)


def test_budget_experiment_cells():
    table = budget_experiment(_config(budget_total=4, budget_views=[1, 2]))
    assert table[["objects", "views_per_object"]].values.tolist() == [[4, 1], [2, 2]]
    with pytest.raises(ConfigError) as err:
        budget_experiment(_config(budget_total=4, budget_views=[8]))
    assert err.value.key == "experiment.budget_views"


def test_augmentation_rows_follow_the_architecture():
    siren = augmentation_rows(MlpSpec.siren([2, 8, 8, 1]))
    assert list(siren) == [
        "none",
        "translate",
        "rotate",
        "scale",
        "gaussian_noise",
        "mask",
        "quantile_mask",
        "permute",
        "siren_negation",
        "siren_bias",
        "mixup_direct",
        "mixup_randomized",
        "mixup_aligned",
        "label_only",
        "input_only",
        "combination",
    ]
    assert siren["none"].is_identity()
    assert siren["mixup_aligned"].mixup.variant == "aligned"
    combo = siren["combination"]
    assert [s.kind for s in combo.pipeline.steps] == [
        "translate",
        "gaussian_noise",
        "siren_negation",
    ]

    relu = augmentation_rows(MlpSpec.relu([3, 8, 1]), seed=4)
    assert "relu_scale" in relu
    assert "rotate" not in relu
    assert "siren_negation" not in relu
    assert relu["permute"].pipeline.seed == 4


def test_augmentations_experiment_selected_rows():
    table = augmentations_experiment(_config(rows=["none", "permute"]))
    assert table["augmentation"].tolist() == ["none", "permute"]
    assert (table["seeds"] == 2).all()
    with pytest.raises(ConfigError) as err:
        augmentations_experiment(_config(rows=["cutout"]))
    assert err.value.key == "experiment.rows"


def test_lmc_pairs(two_view_dataset):
    pairs = lmc_pairs(two_view_dataset, 2)
    assert pairs == [LmcPair(0, 0, 0, 1), LmcPair(1, 1, 0, 1)]
    with pytest.raises(ConfigError) as err:
        lmc_pairs(two_view_dataset, 4)
    assert err.value.key == "lmc.pairs"


def test_lmc_scan(two_view_dataset):
    frame = lmc_scan(two_view_dataset, 2, num_lambdas=5)
    assert frame["pair"].tolist() == [0, 0, 1, 1]
    assert frame["aligned"].tolist() == [False, True, False, True]
    assert (frame["barrier"] >= 0.0).all()
    # both paths start at the same network
    assert frame["loss_start"][0] == frame["loss_start"][1]


def test_lmc_pair_needs_a_manifest(two_view_dataset):
    bare = InrDataset(two_view_dataset.spec, two_view_dataset.samples)
    with pytest.raises(FormatError):
        lmc_pair(bare, LmcPair(0, 0, 0, 1), aligned=False)


@pytest.mark.slow
def test_full_augmentation_table():
    cfg = _config(seeds=3, objects=8, test_objects=8)
    table = augmentations_experiment(cfg)
    assert len(table) == len(augmentation_rows(MlpSpec.siren([2, 8, 8, 1])))
    assert table["accuracy_mean"].between(0.0, 1.0).all()
    assert (table["accuracy_sem"] >= 0.0).all()


def _desk_config(**experiment):
    return RunConfig(
        dataset=DatasetConfig(
            num_objects=50,
            resolution=16,
            fit=TrainConfig(steps=300, learning_rate=1e-3, early_stop_psnr=35.0),
        ),
        probe=ProbeConfig(steps=1000, batch_size=32),
        experiment=ExperimentConfig(seeds=5, objects=50, test_objects=40, **experiment),
    )


def _not_worse(table, key, better, worse):
    rows = table.set_index(key)
    a, b = rows.loc[better], rows.loc[worse]
    slack = (a["accuracy_sem"] ** 2 + b["accuracy_sem"] ** 2) ** 0.5
    return a["accuracy_mean"] - b["accuracy_mean"] >= -slack


@pytest.mark.slow
def test_more_views_do_not_hurt():
    table = views_experiment(_desk_config(max_views=4))
    external = table[table["split"] == "external"]
    assert _not_worse(external, "views", 4, 1)


@pytest.mark.slow
def test_aligned_mixup_direction():
    rows = ["none", "mixup_direct", "mixup_aligned"]
    table = augmentations_experiment(_desk_config(rows=rows))
    assert _not_worse(table, "augmentation", "mixup_aligned", "none")
    assert _not_worse(table, "augmentation", "mixup_aligned", "mixup_direct")


@pytest.mark.slow
def test_mixup_beats_its_ablations():
    rows = ["mixup_direct", "label_only", "input_only"]
    table = augmentations_experiment(_desk_config(rows=rows))
    means = table.set_index("augmentation")["accuracy_mean"]
    assert means["mixup_direct"] >= means["label_only"]
    assert means["mixup_direct"] >= means["input_only"]
