"""评估指标与分解/重光照导出"""
