"""Ensemble Genetic Programming: co-evolved trees and forests for binary
classification, plus standard GP and M3GP baselines."""

from egp.dataset import Dataset, DataSplit, Bag, SamplingMode, load_csv, split, sample_bag, feature_similarity
from egp.engine import EngineConfig, TrainedModel, train, predict
from egp.forest import Forest, Voting

__all__ = [
    "Bag", "DataSplit", "Dataset", "EngineConfig", "Forest", "SamplingMode", "TrainedModel",
    "Voting", "feature_similarity", "load_csv", "predict", "sample_bag", "split", "train",
]
__version__ = "0.1.0"
