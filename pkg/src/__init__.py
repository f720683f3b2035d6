"""Numerical homogenization engine"""
