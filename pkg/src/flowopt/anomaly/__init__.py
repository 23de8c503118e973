from .detector import (DetectionResult, DetectorConfig, DetectorModel, EmptyTrace, EmptyTraining,
                       EmptyValidation, TraceEncoding, calibrate_threshold, evaluate_detector,
                       mean_cross_entropy, roc_auc, score_trace, score_traces, train_detector)
