// SPDX-License-Identifier: Apache-2.0

use huse_client::{Client, ClientError};

#[test]
fn trailing_slash_is_dropped() {
    assert_eq!(
        Client::new("http://127.0.0.1:9/").base_url(),
        "http://127.0.0.1:9"
    );
}

#[tokio::test]
async fn unreachable_service_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = Client::new(format!("http://{addr}"))
        .progress()
        .await
        .unwrap_err();
    assert!(matches!(err, ClientError::Http(_)), "{err}");
    assert!(err.status().is_none());
}
