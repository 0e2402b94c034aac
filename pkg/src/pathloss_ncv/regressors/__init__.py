from pathloss_ncv.regressors.ann import ann_fit, ann_predict  # noqa: F401
from pathloss_ncv.regressors.boosting import (  # noqa: F401
    boosted_predict,
    gbt_fit,
    obt_fit,
)
from pathloss_ncv.regressors.forest import (  # noqa: F401
    feature_importance,
    rf_fit,
    rf_predict,
)
from pathloss_ncv.regressors.svr import svr_fit, svr_predict  # noqa: F401
