"""Reference activation-module thresholds"""
