from refsplat.evalkit.schemes.metrics_report import ViewMetrics, MetricsReport

__all__ = ["ViewMetrics", "MetricsReport"]
