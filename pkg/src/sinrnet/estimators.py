"""scikit-learn style front end to the distributed clustering."""
import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .clustering import ProtocolConfig, clustering, new_session
from .geometry import density
from .sinr_phy import Network, SinrParams


class SinrClustering(BaseEstimator, ClusterMixin):
    """Clusters plane points by simulating the SINR clustering protocol.

    Every point becomes a node; IDs are 1..n in input order unless given to
    ``fit``.  ``labels_`` numbers clusters 0..k-1 by increasing centre ID.
    """

    def __init__(self, alpha=4.0, beta=2.0, noise=1.0, epsilon=0.2, id_bound=1024,
                 gamma=None, seed=7):
        self.alpha = alpha
        self.beta = beta
        self.noise = noise
        self.epsilon = epsilon
        self.id_bound = id_bound
        self.gamma = gamma
        self.seed = seed

    def fit(self, X, y=None, ids=None):
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("expected points in the plane, got %d features" % X.shape[1])
        params = SinrParams(self.alpha, self.beta, self.noise, self.epsilon,
                            max(int(self.id_bound), len(X)))
        ids = np.arange(1, len(X) + 1) if ids is None else np.asarray(ids, dtype=np.int64)
        net = Network(params, ids, X)
        gamma = self.gamma if self.gamma is not None else density(net)
        sess = new_session(net, ProtocolConfig(seed=self.seed))
        cl = clustering(sess, gamma, ids.tolist())
        centers = sorted(set(cl.cluster_of.values()))
        order = {c: i for i, c in enumerate(centers)}
        self.labels_ = np.array([order.get(cl.cluster_of.get(int(v)), -1) for v in ids])
        self.center_ids_ = np.array(centers, dtype=np.int64)
        self.cluster_centers_ = np.array([net.position(c) for c in centers]).reshape(-1, 2)
        self.n_clusters_ = len(centers)
        self.rounds_ = sess.clock
        self.assignment_ = cl
        self.network_ = net
        return self

    def predict(self, X=None):
        """Labels of the fitted points; the protocol has no out-of-sample rule."""
        check_is_fitted(self, "labels_")
        if X is not None and len(X) != len(self.labels_):
            raise ValueError("predict only labels the points seen by fit")
        return self.labels_
