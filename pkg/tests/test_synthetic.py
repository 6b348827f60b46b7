import numpy as np
import pytest

from lance.concept_space import concept_activations
from lance.domain_shift import (
    compute_domain_shifts,
    domain_relevance_scores,
    load_prompt_tensor,
    simulate_domain_specific_activations,
)
from lance.embedding_io import load_manifest, load_text_bank, read_array_file
from lance.errors import InvalidValue, SpecError
from lance.evaluation import js_divergence
from lance.synthetic import (
    GroundTruth,
    SyntheticSpec,
    generate,
    save_world,
    verify_ddo_effect,
)
from lance.training import TrainConfig

# Mean train-vs-unseen activation divergence per concept group, default spec,
# seed 0 (frozen from the run that calibrated the acceptance thresholds).
JS_MEAN_SPECIFIC_SEED0 = 0.6183093876434325
JS_MEAN_SHARED_SEED0 = 0.02599616733138118

SMALL = dict(d=48, n_classes=4, n_shared_concepts=6, n_specific_concepts=6,
             samples_per_class_per_domain=10, n_irrelevant_descriptors=10,
             n_offaxis_styles=8, descriptors_per_domain=2)


class TestSpecValidation:
    def test_dimension_too_small(self):
        with pytest.raises(SpecError, match="orthonormal"):
            SyntheticSpec(d=30, n_classes=10)

    def test_dimension_below_class_plus_domain_bound(self):
        with pytest.raises(SpecError):
            SyntheticSpec(d=9, n_classes=8, domains=("a", "b", "c"),
                          n_offaxis_styles=0, n_irrelevant_descriptors=0)

    def test_counts_at_least_one(self):
        with pytest.raises(SpecError):
            SyntheticSpec(n_classes=0)

    def test_negative_noise(self):
        with pytest.raises(SpecError):
            SyntheticSpec(noise_sigma=-0.1)

    def test_duplicate_domains(self):
        with pytest.raises(SpecError):
            SyntheticSpec(domains=("photo", "photo"))

    def test_dict_round_trip(self):
        spec = SyntheticSpec(seed=5, **SMALL)
        assert SyntheticSpec.from_dict(spec.to_dict()) == spec


class TestGenerate:
    def test_degenerate_world_collapses_per_class(self):
        spec = SyntheticSpec(noise_sigma=0.0, style_strength=0.0,
                             domains=("photo",), **SMALL)
        world = generate(spec)
        acts = concept_activations(world.images, world.concept_bank)
        for label in range(spec.n_classes):
            rows = [it.embedding_row for it in world.manifest.items
                    if it.label == label]
            block = world.images[rows]
            np.testing.assert_array_equal(block, np.repeat(block[:1], len(rows), 0))
            act_block = acts.values[rows]
            np.testing.assert_array_equal(act_block,
                                          np.repeat(act_block[:1], len(rows), 0))

    def test_deterministic_in_seed(self):
        spec = SyntheticSpec(seed=3, **SMALL)
        a = generate(spec)
        b = generate(spec)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.concept_bank.embeddings.tobytes() == b.concept_bank.embeddings.tobytes()
        assert a.prompts.embeddings.tobytes() == b.prompts.embeddings.tobytes()
        assert a.manifest == b.manifest
        assert a.ground_truth == b.ground_truth

    def test_different_seeds_differ(self):
        a = generate(SyntheticSpec(seed=0, **SMALL))
        b = generate(SyntheticSpec(seed=1, **SMALL))
        assert a.images.tobytes() != b.images.tobytes()

    def test_all_rows_unit_norm(self):
        world = generate(SyntheticSpec(seed=2, **SMALL))
        for matrix in (world.images, world.concept_bank.embeddings,
                       world.prompts.embeddings):
            norms = np.sqrt((matrix.astype(np.float64) ** 2).sum(axis=1))
            np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_js_ordering_with_frozen_means(self):
        spec = SyntheticSpec(seed=0)
        world = generate(spec)
        acts = concept_activations(world.images, world.concept_bank)
        truth = world.ground_truth
        train_rows, _ = world.manifest.rows_and_labels(spec.domains[0])
        per_concept = np.zeros(world.concept_bank.size)
        for m in range(world.concept_bank.size):
            values = [
                js_divergence(acts.values[train_rows, m],
                              acts.values[world.manifest.rows_and_labels(dom)[0], m],
                              n_bins=50)
                for dom in spec.domains[1:]
            ]
            per_concept[m] = np.mean(values)
        mean_specific = per_concept[truth.specific_indices].mean()
        mean_shared = per_concept[truth.shared_indices].mean()
        assert mean_specific > mean_shared
        assert mean_specific == pytest.approx(JS_MEAN_SPECIFIC_SEED0, rel=1e-3)
        assert mean_shared == pytest.approx(JS_MEAN_SHARED_SEED0, rel=1e-3)

    @pytest.mark.parametrize("seed", range(5))
    def test_specific_concepts_score_higher_relevance(self, seed):
        world = generate(SyntheticSpec(seed=seed, **SMALL))
        shifts = compute_domain_shifts(world.prompts)
        mean_shift = shifts.shifts.astype(np.float64).mean(axis=0)
        scores = dict(domain_relevance_scores(world.concept_bank,
                                              mean_shift.astype(np.float32)))
        truth = world.ground_truth
        specific = np.mean([scores[world.concept_bank.names[i]]
                            for i in truth.specific_indices])
        shared = np.mean([scores[world.concept_bank.names[i]]
                          for i in truth.shared_indices])
        assert specific > shared

    @pytest.mark.parametrize("seed", range(3))
    def test_shift_rows_track_planted_style(self, seed):
        # every shift row stays aligned (cosine >= 0.9) with its
        # descriptor's consensus shift direction across classes
        world = generate(SyntheticSpec(seed=seed, **SMALL))
        shifts = compute_domain_shifts(world.prompts)
        n_y = world.prompts.n_classes
        for i in range(world.prompts.n_descriptors):
            rows = shifts.shifts[i * n_y:(i + 1) * n_y].astype(np.float64)
            mean_row = rows.mean(axis=0)
            for row in rows:
                cos = row @ mean_row / (np.linalg.norm(row) * np.linalg.norm(mean_row))
                assert cos >= 0.9

    def test_manifest_layout(self):
        spec = SyntheticSpec(seed=1, **SMALL)
        world = generate(spec)
        expected = len(spec.domains) * spec.n_classes * spec.samples_per_class_per_domain
        assert len(world.manifest.items) == expected
        assert len(world.images) == expected
        assert world.manifest.train_domain == spec.domains[0]
        world.manifest.validate_rows(len(world.images))

    def test_ground_truth_shapes(self):
        spec = SyntheticSpec(seed=1, **SMALL)
        truth = generate(spec).ground_truth
        assert len(truth.concept_kinds) == spec.n_shared_concepts + spec.n_specific_concepts
        n_rel = (len(spec.domains) - 1) * spec.descriptors_per_domain
        assert truth.relevant_descriptor_indices == tuple(range(n_rel))
        assert len(truth.descriptor_targets) == n_rel + spec.n_irrelevant_descriptors
        assert GroundTruth.from_dict(truth.to_dict()) == truth


class TestSaveWorld:
    def test_files_load_through_standard_parsers(self, tmp_path):
        spec = SyntheticSpec(seed=4, **SMALL)
        world = generate(spec)
        save_world(world, tmp_path)
        images = read_array_file(tmp_path / "images.npy")
        assert images.tobytes() == world.images.tobytes()
        manifest = load_manifest(tmp_path / "manifest.json")
        assert manifest == world.manifest
        names = load_text_bank(tmp_path / "concepts.txt")
        assert names.entries == list(world.concept_bank.names)
        concepts = read_array_file(tmp_path / "concepts.npy")
        assert concepts.tobytes() == world.concept_bank.embeddings.tobytes()
        prompts = load_prompt_tensor(tmp_path / "prompts.npy", tmp_path / "prompts.json")
        assert prompts.descriptors.entries == world.prompts.descriptors.entries
        assert prompts.embeddings.tobytes() == world.prompts.embeddings.tobytes()


class TestVerifyDdoEffect:
    def test_null_comparison_is_exactly_zero(self):
        spec = SyntheticSpec(seed=0, **SMALL)
        config = TrainConfig(lambda_=0.0, epochs=10, seed=0)
        report = verify_ddo_effect(spec, config, TrainConfig(lambda_=0.0, epochs=10, seed=0))
        assert report.delta_id == 0.0
        assert report.delta_ood == 0.0
        assert report.specific_mass_ratio == pytest.approx(1.0)

    def test_configs_may_differ_only_in_lambda(self):
        spec = SyntheticSpec(seed=0, **SMALL)
        with pytest.raises(InvalidValue):
            verify_ddo_effect(spec, TrainConfig(lambda_=0.0, epochs=10, seed=0),
                              TrainConfig(lambda_=1.0, epochs=20, seed=0))

    def test_report_dict(self):
        spec = SyntheticSpec(seed=0, **SMALL)
        config = TrainConfig(lambda_=0.0, epochs=5, seed=0)
        report = verify_ddo_effect(spec, config, TrainConfig(lambda_=1.0, epochs=5, seed=0))
        doc = report.to_dict()
        assert set(doc) >= {"delta_id", "delta_ood", "specific_mass_ratio"}
