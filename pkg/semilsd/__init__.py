"""Semi-supervised line segment detection"""
